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

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <numeric>

#include "bound_oracle.hpp"
#include "dense_oracles.hpp"
#include "gptm/pipeline.hpp"
#include "gptm/predict.hpp"
#include "gptm/synthetic.hpp"
#include "test_util.hpp"

namespace gptm
{
namespace
{

using Eigen::MatrixXd;
using Eigen::VectorXd;
using oracle::conditioning;

TEST(GpPosterior, UncorrelatedTestPoints)
{
  Rng rng(41);
  const MatrixXd kff = testing::random_spd(rng, 3);
  const MatrixXd kss = testing::random_spd(rng, 2);
  const TestPosterior p = gp_posterior(kff, MatrixXd::Zero(2, 3), kss, testing::random_matrix(rng, 2, 3));
  EXPECT_EQ(p.f_bar, MatrixXd::Zero(2, 2));
  EXPECT_LE((p.k_bar - kss).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GpPosterior, ScalarCase)
{
  MatrixXd f(2, 1);
  f << 1.0, -3.0;
  const TestPosterior p = gp_posterior(
    MatrixXd::Ones(1, 1), MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1), f);
  EXPECT_DOUBLE_EQ(p.f_bar(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.f_bar(1, 0), -1.5);
  EXPECT_DOUBLE_EQ(p.k_bar(0, 0), 0.75);
}

TEST(GpPosterior, MatchesJointConditioning)
{
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const MatrixXd joint = testing::random_spd(rng, 5, 0.5);
    const MatrixXd f = testing::random_matrix(rng, 2, 3);
    const TestPosterior p = gp_posterior(
      joint.topLeftCorner(3, 3), joint.bottomLeftCorner(2, 3), joint.bottomRightCorner(2, 2), f);
    const TestPosterior o = conditioning(joint, 3, f);
    EXPECT_LE((p.f_bar - o.f_bar).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((p.k_bar - o.k_bar).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(GpPosterior, SemidefiniteSchurComplementGetsJitter)
{
  // Two identical test points: k_bar is the rank-one all-ones matrix.
  const TestPosterior p = gp_posterior(
    MatrixXd::Identity(1, 1), MatrixXd::Zero(2, 1), MatrixXd::Ones(2, 2), MatrixXd::Zero(1, 1));
  EXPECT_GT(p.jitter, 0.0);
  EXPECT_LE(p.jitter, 1e-8 * 1111);
  EXPECT_NO_THROW(spd_factorize(p.k_bar));
}

TEST(GpPosterior, TestPointEqualToATrainingPointFails)
{
  // k_bar is exactly zero, so trace-scaled jitter cannot help.
  MatrixXd ksf = MatrixXd::Zero(1, 2);
  ksf(0, 0) = 1.0;
  EXPECT_THROW(
    gp_posterior(MatrixXd::Identity(2, 2), ksf, MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 2)),
    NumericalError);
}

TEST(TestPrior, AnalyticValues)
{
  const int k = 3;
  TestPosterior post{MatrixXd::Zero(k, 1), MatrixXd::Ones(1, 1), 0.0};
  MatrixXd fs = MatrixXd::Zero(k, 1);
  fs(1, 0) = 1.0;
  EXPECT_NEAR(test_prior_log_density(fs, post), -0.5 * k * std::log(2 * std::numbers::pi) - 0.5, 1e-14);

  Rng rng(43);
  TestPosterior p2{testing::random_matrix(rng, 2, 4), testing::random_spd(rng, 4), 0.0};
  const double at_mode = test_prior_log_density(p2.f_bar, p2);
  EXPECT_NEAR(
    at_mode, -0.5 * 2 * (4 * std::log(2 * std::numbers::pi) + std::log(p2.k_bar.determinant())), 1e-12);
  EXPECT_LT(test_prior_log_density(p2.f_bar + MatrixXd::Constant(2, 4, 0.01), p2), at_mode);
}

TEST(TestPrior, MatchesMultivariateNormalOracle)
{
  Rng rng(44);
  for (int rep = 0; rep < 10; ++rep) {
    TestPosterior p{testing::random_matrix(rng, 3, 4), testing::random_spd(rng, 4, 0.3), 0.0};
    const MatrixXd fs = testing::random_matrix(rng, 3, 4);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) {
      expect += oracle::mvn_log_density(fs.row(i).transpose(), p.f_bar.row(i).transpose(), p.k_bar);
    }
    EXPECT_NEAR(test_prior_log_density(fs, p), expect, 1e-10);
  }
}

TEST(TestMeans, IdentityReduction)
{
  Rng rng(45);
  const MatrixXd l = testing::random_matrix(rng, 3, 4);
  TestPosterior p{testing::random_matrix(rng, 3, 4), MatrixXd::Identity(4, 4), 0.0};
  const MatrixXd fs = solve_test_means(l, MatrixXd::Identity(3, 3), p, real_schur(p.k_bar));
  EXPECT_LE((fs - (l + p.f_bar) / 2).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TestMeans, ZeroTheGradientOfTheTestObjective)
{
  Rng rng(46);
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd sigma = testing::random_spd(rng, 2, 0.3);
    TestPosterior p{testing::random_matrix(rng, 2, 3), testing::random_spd(rng, 3, 0.3), 0.0};
    const MatrixXd l = testing::random_matrix(rng, 2, 3);
    const MatrixXd fs = solve_test_means(l, sigma, p, real_schur(p.k_bar));
    const MatrixXd si = sigma.inverse(), ki = p.k_bar.inverse();
    auto g = [&](const MatrixXd & x) {
        return -0.5 * ((l - x).transpose() * si * (l - x)).trace() -
               0.5 * ((x - p.f_bar) * ki * (x - p.f_bar).transpose()).trace();
      };
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) {
        MatrixXd a = fs, b = fs;
        a(i, j) += h;
        b(i, j) -= h;
        EXPECT_NEAR((g(a) - g(b)) / (2 * h), 0.0, 1e-6);
      }
    }
  }
}

struct Fitted
{
  SyntheticCorpus syn;
  Split parts;
  KernelMatrix kernel;
  TrainResult result;
};

Fitted fit_small(Variant v, std::uint64_t seed)
{
  SyntheticSpec spec;
  spec.num_docs = 30;
  spec.vocab_size = 20;
  spec.words_per_doc = 30;
  Fitted f{sample_synthetic(spec, seed), {}, {}, {}};
  f.parts = split(f.syn.corpus, 0.2, seed);
  KernelSpec ks;
  ks.kind = KernelKind::ml;
  ks.c = 1.1;
  f.kernel = build_kernel(ks, f.parts.train);
  TrainConfig cfg;
  cfg.max_em_iters = 20;
  cfg.variant = v;
  f.result = train(f.parts.train, f.kernel, cfg);
  return f;
}

TEST(InferTest, SolutionIsStationaryForTheFullObjective)
{
  const Fitted f = fit_small(Variant::full, 47);
  const auto blocks = ml_test_blocks(f.kernel, f.parts.train.labels(), f.parts.test.labels());
  const TestPosterior post = test_posterior(f.result.model, f.kernel, blocks);
  TrainConfig cfg;
  const TestInference inf = infer_test(f.result.model, f.parts.test, post, cfg);
  EXPECT_TRUE(inf.converged);
  for (std::size_t i = 1; i < inf.objective_trace.size(); ++i) {
    EXPECT_GE(inf.objective_trace[i], inf.objective_trace[i - 1] - 1e-9 * std::abs(inf.objective_trace[i]));
  }
  const TopicPrior prior(f.result.model.sigma);
  const MatrixXd log_beta = log_of(f.result.model.beta);
  auto objective = [&](const MatrixXd & fs) {
      double v = test_prior_log_density(fs, post);
      for (std::size_t d = 0; d < f.parts.test.size(); ++d) {
        v += doc_bound(f.parts.test.docs[d], inf.state.docs[d], prior, fs.col(d), log_beta);
      }
      return v;
    };
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < inf.f_star.rows(); ++i) {
    for (Eigen::Index j = 0; j < inf.f_star.cols(); ++j) {
      MatrixXd a = inf.f_star, b = inf.f_star;
      a(i, j) += h;
      b(i, j) -= h;
      EXPECT_LE(std::abs(objective(a) - objective(b)) / (2 * h), 1e-5);
    }
  }
}

TEST(InferTest, IdentityPosteriorGivesTheAverageOfLambdaAndPriorMean)
{
  const Fitted f = fit_small(Variant::si, 48);
  const Eigen::Index m = f.parts.test.size();
  Rng rng(1);
  TestPosterior post{testing::random_matrix(rng, 3, m), MatrixXd::Identity(m, m), 0.0};
  const TestInference inf = infer_test(f.result.model, f.parts.test, post, TrainConfig{});
  EXPECT_LE((inf.f_star - (inf.state.lambda_matrix() + post.f_bar) / 2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InferTest, FreshDocumentHasZeroPriorMean)
{
  const Fitted f = fit_small(Variant::full, 49);
  Corpus one = select_documents(f.parts.test, {0});
  const TestPosterior post = gp_posterior(
    f.kernel.values, MatrixXd::Zero(1, f.kernel.dim()), MatrixXd::Identity(1, 1), f.result.model.F);
  EXPECT_EQ(post.f_bar, MatrixXd::Zero(3, 1));
  const TestInference inf = infer_test(f.result.model, one, post, TrainConfig{});
  // F_* = (Sigma + I)^-1 lambda when f_bar = 0 and k_bar = 1.
  MatrixXd shifted = f.result.model.sigma + MatrixXd::Identity(3, 3);
  EXPECT_LE((inf.f_star - shifted.ldlt().solve(inf.state.lambda_matrix())).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(InferTest, RejectsMismatchedInputs)
{
  const Fitted f = fit_small(Variant::full, 50);
  TestPosterior post{MatrixXd::Zero(3, 1), MatrixXd::Identity(1, 1), 0.0};
  EXPECT_THROW(infer_test(f.result.model, f.parts.test, post, TrainConfig{}), ValidationError);
}

// Uniform single-topic model: every word has probability 1/V regardless of
// eta. The bound for a document of N words peaks at
//   -N log V - 1/2 log(1 + N Sigma),
// reached at lambda = mu, nu2 = Sigma / (1 + N Sigma).
TEST(Perplexity, UniformSingleTopicClosedForms)
{
  Rng rng(51);
  const int v = 7;
  const Corpus test = testing::random_corpus(rng, 5, v, 25);
  for (double s2 : {0.25, 1.0, 3.0}) {
    ModelParams m;
    m.num_topics = 1;
    m.beta = MatrixXd::Constant(1, v, 1.0 / v);
    m.sigma = MatrixXd::Constant(1, 1, s2);
    m.F = MatrixXd::Zero(1, 1);
    TestPosterior post{MatrixXd::Zero(1, 5), MatrixXd::Identity(5, 5), 0.0};
    TrainConfig cfg;
    cfg.estep_max_iters = 5000;
    cfg.estep_grad_tol = 1e-15;
    cfg.em_rel_tol = 1e-12;
    cfg.max_em_iters = 500;
    const TestInference inf = infer_test(m, test, post, cfg);

    EXPECT_DOUBLE_EQ(
      perplexity_conditional(m, test, inf.f_star, inf.state, LikelihoodEstimate::plugin), v);

    double gap = 0.0;
    for (const auto & d : test.docs) {
      gap += 0.5 * std::log(1.0 + d.total() * s2);
    }
    const double expect = v * std::exp(gap / test.total_words());
    EXPECT_NEAR(perplexity_conditional(m, test, inf.f_star, inf.state), expect, 1e-6 * expect) << s2;
    EXPECT_GT(perplexity_conditional(m, test, inf.f_star, inf.state), v);
  }
}

TEST(Perplexity, ToyInstanceMatchesTheReferenceBound)
{
  Corpus test;
  test.vocab_size = 3;
  test.docs.push_back({{{0, 2}, {2, 1}}, {}});
  test.docs.push_back({{{1, 4}}, {}});
  ModelParams m;
  m.num_topics = 2;
  m.beta.resize(2, 3);
  m.beta << 0.6, 0.3, 0.1,
    0.2, 0.2, 0.6;
  m.sigma.resize(2, 2);
  m.sigma << 1.0, 0.2, 0.2, 0.7;
  m.F = MatrixXd::Zero(2, 1);
  MatrixXd fs(2, 2);
  fs << 0.1, -0.3, 0.4, 0.2;
  VariationalState vs;
  for (int d = 0; d < 2; ++d) {
    DocState st;
    st.lambda = fs.col(d) + VectorXd::Constant(2, 0.1 * (d + 1));
    st.nu2 = VectorXd::Constant(2, 0.5 + d);
    st.zeta = update_zeta(st.lambda, st.nu2);
    st.phi = update_phi(st.lambda, m.beta, test.docs[d]);
    vs.docs.push_back(st);
  }
  double ll = 0.0;
  for (int d = 0; d < 2; ++d) {
    ll += oracle::doc_bound(
      test.docs[d], vs.docs[d].lambda, vs.docs[d].nu2, vs.docs[d].phi, vs.docs[d].zeta, m.sigma,
      fs.col(d), m.beta);
  }
  EXPECT_NEAR(perplexity_conditional(m, test, fs, vs), std::exp(-ll / 7.0), 1e-12);

  TestPosterior post{MatrixXd::Constant(2, 2, 0.05), MatrixXd::Identity(2, 2) * 1.3, 0.0};
  double prior = 0.0;
  for (int i = 0; i < 2; ++i) {
    prior += oracle::mvn_log_density(fs.row(i).transpose(), post.f_bar.row(i).transpose(), post.k_bar);
  }
  EXPECT_NEAR(perplexity_joint(m, test, fs, vs, post), std::exp(-(ll + prior) / 7.0), 1e-12);
}

TEST(Perplexity, InvariantToTestDocumentOrder)
{
  const Fitted f = fit_small(Variant::full, 52);
  const Eigen::Index m = f.parts.test.size();
  TestPosterior post{MatrixXd::Zero(3, m), MatrixXd::Identity(m, m), 0.0};
  const TestInference inf = infer_test(f.result.model, f.parts.test, post, TrainConfig{});
  const double base = perplexity_conditional(f.result.model, f.parts.test, inf.f_star, inf.state);

  std::vector<std::size_t> order(m);
  std::iota(order.rbegin(), order.rend(), std::size_t{0});
  const Corpus rev = select_documents(f.parts.test, order);
  MatrixXd fs(3, m);
  VariationalState vs;
  for (Eigen::Index j = 0; j < m; ++j) {
    fs.col(j) = inf.f_star.col(order[j]);
    vs.docs.push_back(inf.state.docs[order[j]]);
  }
  EXPECT_NEAR(perplexity_conditional(f.result.model, rev, fs, vs), base, 1e-12 * base);
}

TEST(Embedding, ExportAndReadBack)
{
  testing::TempDir dir("embed");
  MatrixXd f(2, 3);
  f << 0.1, 1.0 / 3.0, -2.5e-7,
    std::sqrt(2.0), 4.0, -1.0;
  export_embedding(dir.file("a.csv"), f);
  const Embedding a = read_embedding(dir.file("a.csv"), false);
  EXPECT_EQ(a.coords, f);
  EXPECT_TRUE(a.labels.empty());
  const std::string text = testing::read_file(dir.file("a.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.substr(0, text.find('\n')).find_last_of(','), text.substr(0, text.find('\n')).rfind(','));
  EXPECT_EQ(std::count(text.begin(), text.begin() + text.find('\n'), ','), 2);

  const std::vector<std::optional<int>> labels{2, std::nullopt, 0};
  export_embedding(dir.file("b.csv"), f, &labels);
  const Embedding b = read_embedding(dir.file("b.csv"), true);
  EXPECT_EQ(b.coords, f);
  EXPECT_EQ(b.labels, labels);
}

TEST(KnnSeparability, WellSeparatedClouds)
{
  Rng rng(53);
  MatrixXd e(2, 40);
  std::vector<int> labels(40);
  for (int j = 0; j < 40; ++j) {
    labels[j] = j % 2;
    e(0, j) = 0.1 * rng.normal() + 10.0 * labels[j];
    e(1, j) = 0.1 * rng.normal();
  }
  EXPECT_EQ(knn_separability(e, labels), 1.0);
}

TEST(KnnSeparability, ShuffledLabelsGiveChance)
{
  Rng rng(54);
  const int n = 90, classes = 3;
  const MatrixXd e = testing::random_matrix(rng, 2, n);
  std::vector<int> labels(n);
  for (int j = 0; j < n; ++j) {
    labels[j] = j % classes;
  }
  double total = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    rng.shuffle(labels);
    total += knn_separability(e, labels);
  }
  EXPECT_NEAR(total / 100.0, 1.0 / classes, 0.03);
}

TEST(KnnSeparability, AdversarialLayoutAndErrors)
{
  MatrixXd e(1, 2);
  e << 0.0, 1.0;
  EXPECT_EQ(knn_separability(e, {0, 1}), 0.0);
  EXPECT_THROW(knn_separability(e, {1, 1}), ValidationError);
  EXPECT_THROW(knn_separability(e, {1}), ValidationError);
}

TEST(KnnSeparability, FoldsRestrictTheCandidatePool)
{
  // Points 0 and 2 share fold 0 under two folds, so 0 cannot use 2.
  MatrixXd e(1, 4);
  e << 0.0, 5.0, 0.1, 5.1;
  const std::vector<int> labels{0, 1, 0, 1};
  EXPECT_EQ(knn_separability(e, labels), 1.0);
  EXPECT_EQ(knn_separability(e, labels, 2), 0.0);
}

}  // namespace
}  // namespace gptm
