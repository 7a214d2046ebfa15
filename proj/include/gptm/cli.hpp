// Copyright 2026 The GPTM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
/// \file
/// \brief The `gptm` command line: kernel, train, eval, tune and split.
///
/// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
/// validation failure. Corpora are directories holding docword.txt and
/// optionally vocab.txt and labels.txt.

#ifndef GPTM__CLI_HPP_
#define GPTM__CLI_HPP_

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gptm/checkpoint.hpp"
#include "gptm/corpus.hpp"
#include "gptm/csv.hpp"
#include "gptm/error.hpp"
#include "gptm/kernel.hpp"
#include "gptm/model.hpp"
#include "gptm/pipeline.hpp"
#include "gptm/predict.hpp"
#include "gptm/vi_train.hpp"

namespace gptm
{

namespace cli
{

/// Kernel flags shared by `kernel`, `train` and `tune`.
struct KernelFlags
{
  int k = 10;
  double gamma = 1.0;
  double sigma2 = 1.0;
  std::optional<double> c;
  std::string constraints;

  void add_to(CLI::App & app)
  {
    app.add_option("-k,--neighbors", k, "NN kernel: neighbors per document")->check(CLI::PositiveNumber);
    app.add_option("--gamma", gamma, "kernel scale")->check(CLI::PositiveNumber);
    app.add_option("--sigma2", sigma2, "NN kernel: bandwidth")->check(CLI::PositiveNumber);
    app.add_option("--c", c, "kernel diagonal (default: automatic)")->check(CLI::PositiveNumber);
    app.add_option("--constraints", constraints, "ML kernel: must-link pairs file (default: corpus labels)")
    ->check(CLI::ExistingFile);
  }

  KernelSpec spec(KernelKind kind) const
  {
    KernelSpec s;
    s.kind = kind;
    s.k = k;
    s.gamma = gamma;
    s.sigma2 = sigma2;
    s.c = c;
    s.constraints_path = constraints;
    return s;
  }
};

/// Training flags shared by `train` and `tune`.
struct TrainFlags
{
  TrainConfig config;
  std::string variant = "full";

  void add_to(CLI::App & app)
  {
    app.add_option("-K,--topics", config.num_topics, "number of topics")->check(CLI::PositiveNumber);
    app.add_option("--variant", variant, "full, si, ki or siki")
    ->check(CLI::IsMember({"full", "si", "ki", "siki"}));
    app.add_option("--seed", config.seed, "random seed");
    app.add_option("--threads", config.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--max-iters", config.max_em_iters, "outer EM iterations")->check(CLI::PositiveNumber);
    app.add_option("--tol", config.em_rel_tol, "relative ELBO change to stop")->check(CLI::PositiveNumber);
    app.add_option("--estep-iters", config.estep_max_iters, "per-document E-step iterations")
    ->check(CLI::PositiveNumber);
    app.add_option("--estep-tol", config.estep_grad_tol, "per-document relative bound change")
    ->check(CLI::PositiveNumber);
  }

  TrainConfig resolved() const
  {
    TrainConfig c = config;
    c.variant = parse_variant(variant);
    return c;
  }
};

inline std::vector<double> parse_list(const std::string & text, const char * what)
{
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception &) {
      throw ValidationError(std::string(what) + ": bad value '" + item + "'");
    }
  }
  if (out.empty()) {
    throw ValidationError(std::string(what) + ": empty list");
  }
  return out;
}

/// Creates the parent directory of an output file if it is missing.
inline const std::string & ensure_parent(const std::string & path)
{
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  return path;
}

/// Reads a key=value config file ('#' starts a comment) and returns the
/// arguments for every key whose option `cmd` did not receive on the command
/// line. Keys are long option names without the dashes.
inline std::vector<std::string> config_arguments(const std::string & path, const CLI::App & cmd)
{
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(path + ": cannot open config file");
  }
  std::vector<std::string> args;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const auto trim = [](std::string t) {
        const auto b = t.find_first_not_of(" \t\r");
        const auto e = t.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : t.substr(b, e - b + 1);
      };
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      throw ValidationError(where + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    while (!key.empty() && key.front() == '-') {
      key.erase(0, 1);
    }
    const std::string flag = (key.size() == 1 ? "-" : "--") + key;
    const CLI::Option * opt = key.empty() || key == "config" ? nullptr : cmd.get_option_no_throw(flag);
    if (opt == nullptr || opt->get_positional()) {
      throw ValidationError(where + ": unknown key '" + key + "'");
    }
    if (opt->count() == 0) {
      if (key.size() == 1) {
        args.insert(args.end(), {flag, value});
      } else {
        args.push_back(flag + "=" + value);
      }
    }
  }
  return args;
}

inline void write_report(const std::string & path, const std::string & text)
{
  std::ofstream out(ensure_parent(path), std::ios::binary);
  out << text;
  if (!out) {
    throw Error("cannot write " + path);
  }
}

}  // namespace cli

/// Runs the command line. Output and diagnostics go to `out` and `err`.
inline int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err)
{
  CLI::App app{"Gaussian process topic models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gptm 0.1.0");
  LoadOptions load_opts;
  auto add_allow_empty = [&](CLI::App * cmd) {
      cmd->add_flag("--allow-empty", load_opts.allow_empty, "keep zero-word documents (warns)");
    };

  // split
  std::string split_in, split_train, split_test;
  double split_fraction = 0.2;
  std::uint64_t split_seed = 0;
  auto * split_cmd = app.add_subcommand("split", "Split a corpus into train and test directories");
  split_cmd->add_option("corpus", split_in, "corpus directory")->required()->check(CLI::ExistingDirectory);
  split_cmd->add_option("--fraction", split_fraction, "fraction of documents held out");
  split_cmd->add_option("--seed", split_seed, "random seed");
  split_cmd->add_option("--train-out", split_train, "output directory for the training part")->required();
  split_cmd->add_option("--test-out", split_test, "output directory for the held-out part")->required();

  // kernel
  std::string kernel_in, kernel_out;
  unsigned kernel_threads = 1;
  cli::KernelFlags kernel_flags;
  auto * kernel_cmd = app.add_subcommand("kernel", "Build a document kernel and write it as CSV");
  auto * nn_flag = kernel_cmd->add_flag("--nn", "k-nearest-neighbor kernel");
  auto * ml_flag = kernel_cmd->add_flag("--ml", "must-link kernel");
  nn_flag->excludes(ml_flag);
  kernel_flags.add_to(*kernel_cmd);
  kernel_cmd->add_option("--threads", kernel_threads, "worker threads")->check(CLI::PositiveNumber);
  kernel_cmd->add_option("corpus", kernel_in, "corpus directory")->required()->check(CLI::ExistingDirectory);
  kernel_cmd->add_option("output", kernel_out, "kernel CSV to write")->required();

  // train
  std::string train_in, train_out, train_kernel = "identity";
  cli::KernelFlags train_kflags;
  cli::TrainFlags train_flags;
  bool train_verbose = false;
  auto * train_cmd = app.add_subcommand("train", "Fit a model by variational EM");
  std::string train_config;
  train_cmd->add_option("--config", train_config, "key=value file; command-line flags take precedence")
  ->check(CLI::ExistingFile);
  train_cmd->add_option("corpus", train_in, "corpus directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_out, "checkpoint directory")->required();
  train_cmd->add_option("--kernel", train_kernel, "identity, nn, ml, or a kernel CSV file");
  train_kflags.add_to(*train_cmd);
  train_flags.add_to(*train_cmd);
  train_cmd->add_flag("-v,--verbose", train_verbose, "print the ELBO after every iteration");

  // eval
  std::string eval_ckpt, eval_train, eval_test, eval_out, eval_embed, eval_star_f, eval_star_star;
  unsigned eval_threads = 1;
  auto * eval_cmd = app.add_subcommand("eval", "Infer held-out documents and report perplexity");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required()
  ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--test", eval_test, "held-out corpus directory")->required()
  ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--train", eval_train, "training corpus directory (NN and ML kernels)")
  ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "write the key=value report here as well");
  eval_cmd->add_option("--embed", eval_embed, "write the test embedding CSV");
  eval_cmd->add_option("--kstar-f", eval_star_f, "external kernels: test x train block CSV")
  ->check(CLI::ExistingFile);
  eval_cmd->add_option("--kstar-star", eval_star_star, "external kernels: test x test block CSV")
  ->check(CLI::ExistingFile);
  eval_cmd->add_option("--threads", eval_threads, "worker threads")->check(CLI::PositiveNumber);

  // tune
  std::string tune_in, tune_kind = "nn", tune_gammas = "1", tune_sigma2s = "1", tune_ks = "10", tune_cs;
  std::string tune_constraints;
  int tune_folds = 5;
  cli::TrainFlags tune_flags;
  auto * tune_cmd = app.add_subcommand("tune", "Cross-validated kernel hyperparameter grid search");
  std::string tune_config;
  tune_cmd->add_option("--config", tune_config, "key=value file; command-line flags take precedence")
  ->check(CLI::ExistingFile);
  tune_cmd->add_option("corpus", tune_in, "corpus directory")->required()->check(CLI::ExistingDirectory);
  tune_cmd->add_option("--kernel", tune_kind, "nn or ml")->check(CLI::IsMember({"nn", "ml"}));
  tune_cmd->add_option("--gammas", tune_gammas, "comma-separated gamma values");
  tune_cmd->add_option("--sigma2s", tune_sigma2s, "NN: comma-separated bandwidths");
  tune_cmd->add_option("--ks", tune_ks, "NN: comma-separated neighbor counts");
  tune_cmd->add_option("--cs", tune_cs, "comma-separated diagonals (default: automatic)");
  tune_cmd->add_option("--constraints", tune_constraints, "ML: must-link pairs file")->check(CLI::ExistingFile);
  tune_cmd->add_option("--folds", tune_folds, "cross-validation folds");
  tune_flags.add_to(*tune_cmd);

  for (auto * cmd : {split_cmd, kernel_cmd, train_cmd, eval_cmd, tune_cmd}) {
    add_allow_empty(cmd);
  }

  try {
    app.parse(argc, argv);
    for (auto [cmd, path] : {std::pair{train_cmd, &train_config}, std::pair{tune_cmd, &tune_config}}) {
      if (*cmd && !path->empty()) {
        std::vector<std::string> extra = cli::config_arguments(*path, *cmd);
        if (!extra.empty()) {
          // CLI11 takes the argument vector in reverse order.
          std::vector<std::string> args(argv + 1, argv + argc);
          args.insert(args.end(), extra.begin(), extra.end());
          std::reverse(args.begin(), args.end());
          app.clear();
          app.parse(args);
        }
      }
    }
  } catch (const ValidationError & e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp & e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion & e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError & e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*split_cmd) {
      const Corpus corpus = load_corpus_dir(split_in, load_opts);
      const Split s = split(corpus, split_fraction, split_seed);
      save_corpus_dir(s.train, split_train);
      save_corpus_dir(s.test, split_test);
      out << "train_docs=" << s.train.size() << "\ntest_docs=" << s.test.size() << '\n';
      return 0;
    }

    if (*kernel_cmd) {
      if (!*nn_flag && !*ml_flag) {
        throw ValidationError("kernel: choose --nn or --ml");
      }
      const Corpus corpus = load_corpus_dir(kernel_in, load_opts);
      const KernelSpec spec = kernel_flags.spec(*nn_flag ? KernelKind::nn : KernelKind::ml);
      const KernelMatrix km = build_kernel(spec, corpus, kernel_threads);
      write_matrix_csv(cli::ensure_parent(kernel_out), km.values);
      out << "min_eigenvalue=" << format_double(smallest_eigenvalue(km.values)) << '\n';
      out << "c=" << format_double(km.c) << '\n';
      return 0;
    }

    if (*train_cmd) {
      const TrainConfig config = train_flags.resolved();
      config.validate();
      const Corpus corpus = load_corpus_dir(train_in, load_opts);
      KernelSpec spec;
      if (train_kernel == "identity") {
        spec = train_kflags.spec(KernelKind::identity);
      } else if (train_kernel == "nn") {
        spec = train_kflags.spec(KernelKind::nn);
      } else if (train_kernel == "ml") {
        spec = train_kflags.spec(KernelKind::ml);
      } else {
        if (!std::filesystem::is_regular_file(train_kernel)) {
          throw ValidationError("--kernel: '" + train_kernel + "' is neither a kernel kind nor a file");
        }
        spec.kind = KernelKind::external;
        spec.external_path = train_kernel;
      }
      const KernelMatrix km = build_kernel(spec, corpus, config.threads);
      const TrainResult r = train(corpus, km, config, train_verbose ? &err : nullptr);
      save_checkpoint(train_out, r, config, spec, km);
      out << "iterations=" << r.iterations << '\n';
      out << "converged=" << (r.converged ? 1 : 0) << '\n';
      out << "elbo=" << format_double(r.elbo_trace.back()) << '\n';
      return 0;
    }

    if (*eval_cmd) {
      const Checkpoint cp = load_checkpoint(eval_ckpt);
      TrainConfig config = cp.config;
      config.threads = eval_threads;
      const Corpus test = load_corpus_dir(eval_test, load_opts);
      if (static_cast<Index>(test.vocab_size) != cp.model.vocab_size()) {
        throw ValidationError(
                "eval: test vocabulary V=" + std::to_string(test.vocab_size) +
                " differs from the model's V=" + std::to_string(cp.model.vocab_size()));
      }
      const int d = static_cast<int>(cp.model.num_docs());
      KernelMatrix km;
      TestKernelBlocks blocks;
      if (cp.kernel.kind == KernelKind::identity || kernel_is_identity(cp.model.variant)) {
        km = identity_kernel(d);
        blocks = identity_test_blocks(d, static_cast<int>(test.size()));
      } else if (cp.kernel.kind == KernelKind::external) {
        if (eval_star_f.empty() || eval_star_star.empty()) {
          throw ValidationError("eval: external kernels need --kstar-f and --kstar-star");
        }
        km = build_kernel(
          cp.kernel, Corpus{static_cast<int>(cp.model.vocab_size()), std::vector<Document>(d), {}});
        blocks = {read_matrix_csv(eval_star_f), read_matrix_csv(eval_star_star)};
        const Index m = static_cast<Index>(test.size());
        if (blocks.star_f.rows() != m || blocks.star_f.cols() != d ||
          blocks.star_star.rows() != m || blocks.star_star.cols() != m)
        {
          throw ValidationError("eval: test kernel blocks have the wrong shape");
        }
      } else {
        if (eval_train.empty()) {
          throw ValidationError("eval: --train is required for NN and ML kernels");
        }
        const Corpus train_corpus = load_corpus_dir(eval_train, load_opts);
        if (static_cast<int>(train_corpus.size()) != d) {
          throw ValidationError(
                  "eval: training corpus has D=" + std::to_string(train_corpus.size()) +
                  " but the checkpoint has D=" + std::to_string(d));
        }
        km = build_kernel(cp.kernel, train_corpus, eval_threads);
        blocks = build_test_blocks(cp.kernel, km, train_corpus, test, eval_threads);
      }
      const Evaluation ev = evaluate(cp.model, km, blocks, test, config);
      std::ostringstream report;
      report << "estimator=bound\n";
      report << "perplexity_conditional=" << format_double(ev.perplexity_conditional) << '\n';
      report << "perplexity_joint=" << format_double(ev.perplexity_joint) << '\n';
      report << "perplexity_conditional_plugin=" << format_double(ev.perplexity_conditional_plugin) << '\n';
      if (ev.knn_accuracy) {
        report << "knn_accuracy=" << format_double(*ev.knn_accuracy) << '\n';
      }
      report << "test_docs=" << test.size() << '\n';
      report << "iterations=" << ev.inference.iterations << '\n';
      report << "converged=" << (ev.inference.converged ? 1 : 0) << '\n';
      out << report.str();
      if (!eval_out.empty()) {
        cli::write_report(eval_out, report.str());
      }
      if (!eval_embed.empty()) {
        const auto labels = test.labels();
        export_embedding(
          cli::ensure_parent(eval_embed), ev.inference.f_star, test.has_labels() ? &labels : nullptr);
      }
      return 0;
    }

    if (*tune_cmd) {
      const TrainConfig config = tune_flags.resolved();
      config.validate();
      const Corpus corpus = load_corpus_dir(tune_in, load_opts);
      const KernelKind kind = tune_kind == "nn" ? KernelKind::nn : KernelKind::ml;
      const auto gammas = cli::parse_list(tune_gammas, "--gammas");
      std::vector<std::optional<double>> cs;
      if (tune_cs.empty()) {
        cs.push_back(std::nullopt);
      } else {
        for (double c : cli::parse_list(tune_cs, "--cs")) {
          cs.push_back(c);
        }
      }
      std::vector<KernelSpec> grid;
      for (double g : gammas) {
        for (const auto & c : cs) {
          if (kind == KernelKind::nn) {
            for (double s2 : cli::parse_list(tune_sigma2s, "--sigma2s")) {
              for (double k : cli::parse_list(tune_ks, "--ks")) {
                if (k != std::floor(k)) {
                  throw ValidationError("--ks: neighbor counts must be integers");
                }
                KernelSpec s;
                s.kind = kind;
                s.gamma = g;
                s.sigma2 = s2;
                s.k = static_cast<int>(k);
                s.c = c;
                grid.push_back(s);
              }
            }
          } else {
            KernelSpec s;
            s.kind = kind;
            s.gamma = g;
            s.c = c;
            s.constraints_path = tune_constraints;
            grid.push_back(s);
          }
        }
      }
      const auto cells = tune_kernel(corpus, grid, tune_folds, config);
      auto describe = [&](const KernelSpec & s) {
          std::ostringstream o;
          o << "gamma=" << format_double(s.gamma);
          if (kind == KernelKind::nn) {
            o << " sigma2=" << format_double(s.sigma2) << " k=" << s.k;
          }
          o << " c=" << (s.c ? format_double(*s.c) : std::string("auto"));
          return o.str();
        };
      for (const auto & cell : cells) {
        out << describe(cell.spec) << ' ';
        if (cell.perplexity) {
          out << "perplexity=" << format_double(*cell.perplexity) << '\n';
        } else {
          out << "invalid: " << cell.invalid << '\n';
        }
      }
      const auto best = best_cell(cells);
      if (!best) {
        err << "tune: no valid grid cell\n";
        return 1;
      }
      out << "best " << describe(cells[*best].spec) << '\n';
      return 0;
    }
  } catch (const ValidationError & e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception & e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace gptm

#endif  // GPTM__CLI_HPP_
