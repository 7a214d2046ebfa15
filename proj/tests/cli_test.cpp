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

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gptm/cli.hpp"
#include "gptm/synthetic.hpp"
#include "test_util.hpp"

namespace gptm
{
namespace
{

using testing::read_file;
using testing::TempDir;
using testing::write_file;

struct Outcome
{
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args)
{
  args.insert(args.begin(), "gptm");
  std::vector<const char *> argv;
  for (const auto & a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> key_values(const std::string & text)
{
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.find(' ') == std::string::npos) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  return kv;
}

/// Saves a labeled synthetic corpus with D documents and returns its directory.
std::string synthetic_dir(const TempDir & dir, const std::string & name, int docs, std::uint64_t seed = 1)
{
  SyntheticSpec s;
  s.num_docs = docs;
  s.vocab_size = 30;
  s.words_per_doc = 30;
  save_corpus_dir(sample_synthetic(s, seed).corpus, dir.file(name));
  return dir.file(name);
}

nlohmann::json meta(const std::string & ckpt)
{
  return nlohmann::json::parse(read_file(ckpt + "/meta.json"));
}

const char * const kCheckpointFiles[] = {
  "beta.csv", "sigma.csv", "F.csv", "lambda.csv", "nu2.csv", "elbo_trace.csv", "meta.json"};

TEST(CliKernel, NearestNeighborKernelIsWrittenAndPositiveDefinite)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 30);
  const Outcome r = run({"kernel", "--nn", "-k", "10", "--gamma", "1", "--sigma2", "1", corpus, dir.file("out/k.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Eigen::MatrixXd k = read_matrix_csv(dir.file("out/k.csv"));
  ASSERT_EQ(k.rows(), 30);
  ASSERT_EQ(k.cols(), 30);
  EXPECT_EQ(k, k.transpose());
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff(), 0.0);
  const auto kv = key_values(r.out);
  ASSERT_TRUE(kv.count("min_eigenvalue"));
  EXPECT_GT(std::stod(kv.at("min_eigenvalue")), 0.0);
  EXPECT_DOUBLE_EQ(std::stod(kv.at("c")), k(0, 0));
}

TEST(CliKernel, MissingConstraintsFileIsUsageError)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 20);
  const Outcome r = run({"kernel", "--ml", "--constraints", dir.file("none.txt"), corpus, dir.file("k.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir.file("k.csv")));
}

TEST(CliKernel, TooManyNeighborsIsConstructionFailure)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 100);
  const Outcome r = run({"kernel", "--nn", "-k", "500", corpus, dir.file("k.csv")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("k must be < D"), std::string::npos) << r.err;
}

TEST(CliKernel, UsageErrors)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 20);
  EXPECT_EQ(run({"kernel", corpus, dir.file("k.csv")}).code, 2);
  EXPECT_EQ(run({"kernel", "--nn", "--ml", corpus, dir.file("k.csv")}).code, 2);
  EXPECT_EQ(run({"kernel", "--nn", "--gamma", "-1", corpus, dir.file("k.csv")}).code, 2);
  EXPECT_EQ(run({"kernel", "--nn", dir.file("nowhere"), dir.file("k.csv")}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST(CliKernel, MustLinkFromConstraintsFile)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 6);
  write_file(dir.file("pairs.txt"), "# 1-indexed\n1 2\n2 3\n");
  ASSERT_EQ(run({"kernel", "--ml", "--constraints", dir.file("pairs.txt"), "--c", "3", corpus, dir.file("k.csv")}).code, 0);
  const Eigen::MatrixXd k = read_matrix_csv(dir.file("k.csv"));
  // closure links 0 and 2 as well
  EXPECT_EQ(k(0, 2), 1.0);
  EXPECT_EQ(k(0, 3), 0.0);
  EXPECT_EQ(k(4, 4), 3.0);
}

TEST(CliTrain, SikiMetaRecordsFixedSigmaAndKernel)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 20);
  const Outcome r = run({"train", corpus, "--out", dir.file("ck"), "--variant", "siki", "-K", "3", "--max-iters", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = meta(dir.file("ck"));
  EXPECT_EQ(m["variant"], "siki");
  EXPECT_EQ(m["sigma_fixed"], true);
  EXPECT_EQ(m["kernel_fixed_identity"], true);
  EXPECT_EQ(read_matrix_csv(dir.file("ck/sigma.csv")), Eigen::MatrixXd::Identity(3, 3));
  for (const char * f : kCheckpointFiles) {
    EXPECT_TRUE(std::filesystem::exists(dir.file("ck") + "/" + f)) << f;
  }
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("iterations"), m["iterations"].dump());
}

TEST(CliTrain, RerunWithSameSeedIsByteIdentical)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 24);
  const std::vector<std::string> base = {"train", corpus, "--kernel", "nn", "-k", "4", "--seed", "11", "--max-iters", "4"};
  for (const auto & [name, threads] : std::vector<std::pair<std::string, std::string>>{{"a", "1"}, {"b", "1"}, {"c", "3"}}) {
    auto args = base;
    args.insert(args.end(), {"--out", dir.file(name), "--threads", threads});
    ASSERT_EQ(run(args).code, 0);
  }
  for (const char * f : kCheckpointFiles) {
    const std::string a = read_file(dir.file("a") + "/" + f);
    EXPECT_EQ(a, read_file(dir.file("b") + "/" + f)) << f;
    EXPECT_EQ(a, read_file(dir.file("c") + "/" + f)) << f;
  }
}

TEST(CliTrain, KernelDimensionMismatchIsUsageErrorBeforeTraining)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 20);
  write_matrix_csv(dir.file("k.csv"), Eigen::MatrixXd::Identity(5, 5));
  const Outcome r = run({"train", corpus, "--out", dir.file("ck"), "--kernel", dir.file("k.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("D=20"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir.file("ck")));
}

TEST(CliTrain, ExternalKernelFileIsAccepted)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  ASSERT_EQ(run({"kernel", "--ml", corpus, dir.file("k.csv")}).code, 0);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("ck"), "--kernel", dir.file("k.csv"), "--max-iters", "3"}).code, 0);
  EXPECT_EQ(meta(dir.file("ck"))["kernel"]["kind"], "external");
}

TEST(CliTrain, ConfigFileIsOverriddenByFlags)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  write_file(dir.file("run.conf"), "# experiment\ntopics=2\nseed=5\nmax-iters=3\n");
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("a"), "--config", dir.file("run.conf")}).code, 0);
  auto m = meta(dir.file("a"));
  EXPECT_EQ(m["K"], 2);
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["config"]["max_em_iters"], 3);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("b"), "--config", dir.file("run.conf"), "--seed", "9"}).code, 0);
  m = meta(dir.file("b"));
  EXPECT_EQ(m["K"], 2);
  EXPECT_EQ(m["seed"], 9);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("c"), "--max-iters", "2"}).code, 0);
  EXPECT_EQ(meta(dir.file("c"))["K"], TrainConfig{}.num_topics);
  EXPECT_EQ(run({"train", corpus, "--out", dir.file("d"), "--config", dir.file("missing.conf")}).code, 2);
}

TEST(CliTrain, EmptyDocumentsNeedAllowEmpty)
{
  TempDir dir("cli");
  std::filesystem::create_directories(dir.file("c"));
  write_file(dir.file("c/docword.txt"), "3\n4\n4\n1 1 2\n1 2 1\n3 3 4\n3 4 1\n");
  EXPECT_EQ(run({"train", dir.file("c"), "--out", dir.file("a"), "-K", "2"}).code, 2);
  const Outcome r = run({"train", dir.file("c"), "--out", dir.file("b"), "-K", "2", "--allow-empty", "--max-iters", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(meta(dir.file("b"))["D"], 3);
}

TEST(CliEval, EmbeddingHasOneRowPerTestDocument)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 30);
  ASSERT_EQ(run({"split", corpus, "--fraction", "0.2", "--seed", "3", "--train-out", dir.file("tr"), "--test-out", dir.file("te")}).code, 0);
  ASSERT_EQ(run({"train", dir.file("tr"), "--out", dir.file("ck"), "--kernel", "ml", "--max-iters", "5"}).code, 0);
  const Outcome r = run({"eval", "--checkpoint", dir.file("ck"), "--train", dir.file("tr"), "--test", dir.file("te"),
    "--embed", dir.file("emb/e.csv"), "--out", dir.file("report.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Embedding e = read_embedding(dir.file("emb/e.csv"), true);
  EXPECT_EQ(e.coords.cols(), 6);
  EXPECT_EQ(e.coords.rows(), 3);
  EXPECT_EQ(e.labels.size(), 6u);
  const std::string csv = read_file(dir.file("emb/e.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(read_file(dir.file("report.txt")), r.out);
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("estimator"), "bound");
  EXPECT_EQ(kv.at("test_docs"), "6");
  for (const char * key : {"perplexity_conditional", "perplexity_joint", "perplexity_conditional_plugin", "knn_accuracy"}) {
    ASSERT_TRUE(kv.count(key)) << key;
    EXPECT_TRUE(std::isfinite(std::stod(kv.at(key)))) << key;
  }
  // rerun is idempotent
  ASSERT_EQ(run({"eval", "--checkpoint", dir.file("ck"), "--train", dir.file("tr"), "--test", dir.file("te"),
    "--embed", dir.file("e2.csv")}).out, r.out);
  EXPECT_EQ(read_file(dir.file("e2.csv")), read_file(dir.file("emb/e.csv")));
}

TEST(CliEval, MissingCheckpointIsUsageError)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  EXPECT_EQ(run({"eval", "--checkpoint", dir.file("nope"), "--test", corpus}).code, 2);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("ck"), "--max-iters", "2"}).code, 0);
  std::filesystem::remove(dir.file("ck/F.csv"));
  EXPECT_EQ(run({"eval", "--checkpoint", dir.file("ck"), "--test", corpus}).code, 2);
}

TEST(CliEval, KernelCheckpointNeedsTrainingCorpus)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("ck"), "--kernel", "ml", "--max-iters", "2"}).code, 0);
  EXPECT_EQ(run({"eval", "--checkpoint", dir.file("ck"), "--test", corpus}).code, 2);
  const auto other = synthetic_dir(dir, "o", 10);
  EXPECT_EQ(run({"eval", "--checkpoint", dir.file("ck"), "--train", other, "--test", corpus}).code, 2);
}

// A single-topic checkpoint whose topic is uniform over the vocabulary. The
// plug-in estimate is V exactly; the reported (bound) estimate is
// V * exp(sum_d 1/2 log(1 + N_d Sigma) / sum_d N_d).
TEST(CliEval, UniformSingleTopicCheckpoint)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  ASSERT_EQ(run({"train", corpus, "--out", dir.file("ck"), "-K", "1", "--max-iters", "3"}).code, 0);
  const int v = 30;
  write_matrix_csv(dir.file("ck/beta.csv"), Eigen::MatrixXd::Constant(1, v, 1.0 / v));
  const Outcome r = run({"eval", "--checkpoint", dir.file("ck"), "--test", corpus});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = key_values(r.out);
  EXPECT_NEAR(std::stod(kv.at("perplexity_conditional_plugin")), v, 1e-12 * v);

  const double s2 = read_matrix_csv(dir.file("ck/sigma.csv"))(0, 0);
  const Corpus c = load_corpus_dir(corpus);
  double gap = 0.0;
  for (const auto & d : c.docs) {
    gap += 0.5 * std::log(1.0 + d.total() * s2);
  }
  const double expect = v * std::exp(gap / c.total_words());
  EXPECT_NEAR(std::stod(kv.at("perplexity_conditional")), expect, 1e-4 * expect);
}

TEST(CliTune, SingleCellMatchesManualCrossValidation)
{
  TempDir dir("cli");
  const auto dir_c = synthetic_dir(dir, "c", 20);
  const Outcome r = run({"tune", dir_c, "--kernel", "nn", "--gammas", "1", "--sigma2s", "1", "--ks", "4",
    "--folds", "3", "--seed", "2", "--max-iters", "4", "-K", "3"});
  ASSERT_EQ(r.code, 0) << r.err;

  const Corpus corpus = load_corpus_dir(dir_c);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.max_em_iters = 4;
  KernelSpec spec;
  spec.kind = KernelKind::nn;
  spec.k = 4;
  double ll = 0.0, words = 0.0;
  for (const auto & held : cv_folds(corpus.size(), 3, 2)) {
    std::vector<std::size_t> keep;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
      if (std::find(held.begin(), held.end(), d) == held.end()) {
        keep.push_back(d);
      }
    }
    const Corpus tr = select_documents(corpus, keep);
    const Corpus te = select_documents(corpus, held);
    const KernelMatrix km = build_kernel(spec, tr);
    const Evaluation ev = evaluate(train(tr, km, cfg).model, km, build_test_blocks(spec, km, tr, te), te, cfg);
    ll -= std::log(ev.perplexity_conditional) * te.total_words();
    words += te.total_words();
  }
  const std::string line = "gamma=1 sigma2=1 k=4 c=auto perplexity=" + format_double(std::exp(-ll / words));
  EXPECT_NE(r.out.find(line + "\n"), std::string::npos) << r.out << "\nexpected: " << line;
  EXPECT_NE(r.out.find("best gamma=1 sigma2=1 k=4 c=auto\n"), std::string::npos);
}

TEST(CliTune, TwoByTwoGridHasDeterministicWinner)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 50);
  const std::vector<std::string> args = {"tune", corpus, "--kernel", "nn", "--gammas", "0.5,1", "--ks", "3,8",
    "--folds", "5", "--seed", "4", "--max-iters", "4"};
  const Outcome a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 5);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '='), 4 * 5 + 4);
  EXPECT_NE(a.out.find("\nbest "), std::string::npos);
  EXPECT_EQ(run(args).out, a.out);
}

TEST(CliTune, CellsWithTooManyNeighborsAreInvalid)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 20);
  const Outcome r = run({"tune", corpus, "--kernel", "nn", "--ks", "60,3", "--folds", "2", "--max-iters", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("k=60 c=auto invalid: "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("k must be < D"), std::string::npos);
  EXPECT_NE(r.out.find("best gamma=1 sigma2=1 k=3 c=auto"), std::string::npos) << r.out;
  const Outcome none = run({"tune", corpus, "--kernel", "nn", "--ks", "60", "--folds", "2", "--max-iters", "2"});
  EXPECT_EQ(none.code, 1);
  EXPECT_EQ(run({"tune", corpus, "--ks", "3,x"}).code, 2);
  EXPECT_EQ(run({"tune", corpus, "--folds", "1"}).code, 2);
}

TEST(CliSplit, PartitionsTheCorpusReproducibly)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 25);
  const Outcome r = run({"split", corpus, "--fraction", "0.2", "--seed", "8", "--train-out", dir.file("a/tr"), "--test-out", dir.file("a/te")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "train_docs=20\ntest_docs=5\n");
  const Corpus tr = load_corpus_dir(dir.file("a/tr"));
  const Corpus te = load_corpus_dir(dir.file("a/te"));
  EXPECT_EQ(tr.total_words() + te.total_words(), load_corpus_dir(corpus).total_words());
  EXPECT_TRUE(tr.has_labels());
  ASSERT_EQ(run({"split", corpus, "--fraction", "0.2", "--seed", "8", "--train-out", dir.file("b/tr"), "--test-out", dir.file("b/te")}).code, 0);
  for (const char * f : {"tr/docword.txt", "te/docword.txt", "tr/labels.txt", "te/labels.txt"}) {
    EXPECT_EQ(read_file(dir.file("a") + "/" + f), read_file(dir.file("b") + "/" + f)) << f;
  }
  EXPECT_EQ(run({"split", corpus, "--fraction", "1.5", "--train-out", dir.file("x"), "--test-out", dir.file("y")}).code, 2);
}

#ifdef GPTM_CLI_PATH
int exit_status(const std::string & args)
{
  const int status = std::system((std::string("\"") + GPTM_CLI_PATH + "\" " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliBinary, ExitCodes)
{
  TempDir dir("cli");
  const auto corpus = synthetic_dir(dir, "c", 12);
  EXPECT_EQ(exit_status("--version"), 0);
  EXPECT_EQ(exit_status("--help"), 0);
  EXPECT_EQ(exit_status(""), 2);
  EXPECT_EQ(exit_status("kernel --nn " + corpus + " " + dir.file("k.csv")), 0);
  EXPECT_EQ(exit_status("kernel --nn -k 40 " + corpus + " " + dir.file("k.csv")), 1);
  EXPECT_EQ(exit_status("train " + corpus), 2);
}
#endif

}  // namespace
}  // namespace gptm
