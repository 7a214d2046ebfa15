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
/// \brief Glue between corpora, kernel specifications, training and
/// evaluation, shared by the command line tool and the experiments.

#ifndef GPTM__PIPELINE_HPP_
#define GPTM__PIPELINE_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gptm/corpus.hpp"
#include "gptm/csv.hpp"
#include "gptm/error.hpp"
#include "gptm/kernel.hpp"
#include "gptm/model.hpp"
#include "gptm/predict.hpp"
#include "gptm/random.hpp"
#include "gptm/vi_train.hpp"

namespace gptm
{

/// How to build the document kernel for a corpus.
struct KernelSpec
{
  KernelKind kind = KernelKind::identity;
  int k = 10;
  double gamma = 1.0;
  double sigma2 = 1.0;
  std::optional<double> c;          ///< unset: automatic diagonal
  std::string constraints_path;     ///< ML: constraints file; empty uses corpus labels
  std::string external_path;        ///< external: dense CSV
};

inline KernelMatrix build_kernel(const KernelSpec & spec, const Corpus & corpus, unsigned threads = 1)
{
  const int n = static_cast<int>(corpus.size());
  switch (spec.kind) {
    case KernelKind::nn:
      return build_knn_kernel(corpus, spec.k, spec.gamma, spec.sigma2, spec.c, threads);
    case KernelKind::ml: {
        const ConstraintSet cs = spec.constraints_path.empty() ?
          labels_to_constraints(corpus.labels()) : load_constraints(spec.constraints_path);
        return build_ml_kernel(cs, n, spec.gamma, spec.c);
      }
    case KernelKind::identity:
      return identity_kernel(n);
    case KernelKind::external: {
        MatrixXd values = read_matrix_csv(spec.external_path);
        if (values.rows() != n || values.cols() != n) {
          throw ValidationError(
                  "external kernel is " + std::to_string(values.rows()) + "x" +
                  std::to_string(values.cols()) + " but the corpus has D=" + std::to_string(n));
        }
        return external_kernel(std::move(values));
      }
  }
  throw ValidationError("unknown kernel kind");
}

/// Joint-kernel blocks for held-out documents, consistent with how the
/// training kernel was built.
inline TestKernelBlocks build_test_blocks(
  const KernelSpec & spec, const KernelMatrix & train_kernel, const Corpus & train,
  const Corpus & test, unsigned threads = 1)
{
  switch (spec.kind) {
    case KernelKind::nn:
      return knn_test_blocks(train_kernel, train, test, threads);
    case KernelKind::ml:
      return ml_test_blocks(train_kernel, train.labels(), test.labels());
    case KernelKind::identity:
      return identity_test_blocks(static_cast<int>(train.size()), static_cast<int>(test.size()));
    case KernelKind::external:
      throw ValidationError("external kernels need explicit test kernel blocks");
  }
  throw ValidationError("unknown kernel kind");
}

/// GP posterior for the test means under the model's variant. Variants that
/// replace the kernel by I get f_bar = 0 and k_bar = I.
inline TestPosterior test_posterior(
  const ModelParams & model, const KernelMatrix & train_kernel, const TestKernelBlocks & blocks)
{
  const Index m = blocks.star_star.rows();
  if (kernel_is_identity(model.variant) || train_kernel.kind == KernelKind::identity) {
    return {MatrixXd::Zero(model.num_topics, m), MatrixXd::Identity(m, m), 0.0};
  }
  return gp_posterior(train_kernel.values, blocks.star_f, blocks.star_star, model.F);
}

struct Evaluation
{
  TestPosterior posterior;
  TestInference inference;
  double perplexity_conditional = 0.0;
  double perplexity_joint = 0.0;
  double perplexity_conditional_plugin = 0.0;
  std::optional<double> knn_accuracy;
};

/// Test labels (when present for every test document, with at least two
/// classes) feed the 1-NN separability score of the F_* embedding.
inline Evaluation evaluate(
  const ModelParams & model, const KernelMatrix & train_kernel, const TestKernelBlocks & blocks,
  const Corpus & test, const TrainConfig & config)
{
  Evaluation ev;
  ev.posterior = test_posterior(model, train_kernel, blocks);
  ev.inference = infer_test(model, test, ev.posterior, config);
  const auto & fs = ev.inference.f_star;
  ev.perplexity_conditional = perplexity_conditional(model, test, fs, ev.inference.state);
  ev.perplexity_joint = perplexity_joint(model, test, fs, ev.inference.state, ev.posterior);
  ev.perplexity_conditional_plugin =
    perplexity_conditional(model, test, fs, ev.inference.state, LikelihoodEstimate::plugin);
  std::vector<int> labels;
  for (const auto & d : test.docs) {
    if (!d.label) {
      labels.clear();
      break;
    }
    labels.push_back(*d.label);
  }
  if (!labels.empty() && std::set<int>(labels.begin(), labels.end()).size() >= 2) {
    ev.knn_accuracy = knn_separability(fs, labels);
  }
  return ev;
}

/// Fold membership for n-fold cross-validation: a seeded permutation dealt
/// round-robin, each fold sorted by document index.
inline std::vector<std::vector<std::size_t>> cv_folds(std::size_t n, int folds, std::uint64_t seed)
{
  if (folds < 2 || static_cast<std::size_t>(folds) > n) {
    throw ValidationError(
            "cross-validation needs 2 <= folds <= D (folds=" + std::to_string(folds) + ", D=" +
            std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) {
    out[i % folds].push_back(order[i]);
  }
  for (auto & f : out) {
    std::sort(f.begin(), f.end());
  }
  return out;
}

/// One grid point of a kernel hyperparameter search.
struct TuneCell
{
  KernelSpec spec;
  std::optional<double> perplexity;  ///< pooled held-out conditional perplexity
  std::string invalid;               ///< non-empty when the kernel cannot be built
};

/// Cross-validated conditional perplexity of every kernel spec in `grid`.
/// Cells whose kernel cannot be built (bad parameters, k >= D) are marked
/// invalid and skipped; numerical failures propagate.
inline std::vector<TuneCell> tune_kernel(
  const Corpus & corpus, const std::vector<KernelSpec> & grid, int folds,
  const TrainConfig & config)
{
  const auto parts = cv_folds(corpus.size(), folds, config.seed);
  std::vector<TuneCell> cells;
  for (const KernelSpec & spec : grid) {
    TuneCell cell{spec, std::nullopt, {}};
    double ll = 0.0;
    double words = 0.0;
    try {
      for (const auto & held : parts) {
        std::vector<std::size_t> keep;
        std::size_t h = 0;
        for (std::size_t d = 0; d < corpus.size(); ++d) {
          if (h < held.size() && held[h] == d) {
            ++h;
          } else {
            keep.push_back(d);
          }
        }
        const Corpus train_part = select_documents(corpus, keep);
        const Corpus test_part = select_documents(corpus, held);
        const KernelMatrix km = build_kernel(spec, train_part, config.threads);
        const TrainResult tr = train(train_part, km, config);
        const TestKernelBlocks blocks = build_test_blocks(spec, km, train_part, test_part, config.threads);
        const Evaluation ev = evaluate(tr.model, km, blocks, test_part, config);
        const double n = static_cast<double>(test_part.total_words());
        ll += -std::log(ev.perplexity_conditional) * n;
        words += n;
      }
      cell.perplexity = std::exp(-ll / words);
    } catch (const KernelConstructionError & e) {
      cell.invalid = e.what();
    } catch (const ValidationError & e) {
      cell.invalid = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

/// Index of the valid cell with the lowest perplexity (first on ties).
inline std::optional<std::size_t> best_cell(const std::vector<TuneCell> & cells)
{
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].perplexity && (!best || *cells[i].perplexity < *cells[*best].perplexity)) {
      best = i;
    }
  }
  return best;
}

}  // namespace gptm

#endif  // GPTM__PIPELINE_HPP_
