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
/// \brief Test-time inference: GP regression for held-out document means,
/// variational inference with a Sylvester step for F_*, perplexity and
/// embedding export.

#ifndef GPTM__PREDICT_HPP_
#define GPTM__PREDICT_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gptm/corpus.hpp"
#include "gptm/csv.hpp"
#include "gptm/error.hpp"
#include "gptm/estep.hpp"
#include "gptm/kernel.hpp"
#include "gptm/linalg.hpp"
#include "gptm/model.hpp"
#include "gptm/parallel.hpp"
#include "gptm/vi_train.hpp"

namespace gptm
{

/// GP-regression prior for the test means: rows of F_* are independent
/// N(row of f_bar, k_bar).
struct TestPosterior
{
  MatrixXd f_bar;   ///< K x M
  MatrixXd k_bar;   ///< M x M
  double jitter = 0.0;
};

/// f_bar^T = K_*f K_ff^{-1} F^T and k_bar = K_** - K_*f K_ff^{-1} K_f*,
/// via a Cholesky factor of K_ff. k_bar receives escalating jitter if it
/// does not factorize.
inline TestPosterior gp_posterior(
  const MatrixXd & k_ff, const MatrixXd & k_star_f, const MatrixXd & k_star_star,
  const MatrixXd & f)
{
  const Index d = k_ff.rows();
  const Index m = k_star_star.rows();
  if (k_ff.cols() != d || k_star_f.rows() != m || k_star_f.cols() != d ||
    k_star_star.cols() != m || f.cols() != d)
  {
    throw ValidationError("gp_posterior: dimension mismatch");
  }
  SpdFactor chol;
  try {
    chol = spd_factorize(k_ff);
  } catch (const NotPositiveDefinite & e) {
    throw NumericalError(std::string("gp_posterior: training kernel: ") + e.what());
  }
  TestPosterior p;
  const MatrixXd v = chol.lower().triangularView<Eigen::Lower>().solve(k_star_f.transpose());
  p.f_bar = f * chol.lower().transpose().triangularView<Eigen::Upper>().solve(v);
  p.k_bar = symmetrize(k_star_star - v.transpose() * v);
  p.jitter = apply_jitter_until_pd(p.k_bar, "test posterior kernel");
  return p;
}

/// log p(F_* | F, K~): independent rows, each N(f_bar_i, k_bar).
inline double test_prior_log_density(const MatrixXd & f_star, const TestPosterior & post)
{
  const SpdFactor chol = spd_factorize(post.k_bar);
  const double k = static_cast<double>(f_star.rows());
  const double m = static_cast<double>(f_star.cols());
  return -0.5 * k * m * kLog2Pi - 0.5 * k * chol.log_det() -
         0.5 * chol.trace_quad(f_star - post.f_bar);
}

/// Solves the first-order condition of
///   1/2 Tr[(L - F_*)^T Sigma^{-1} (L - F_*)] + 1/2 Tr[(F_* - f_bar) k_bar^{-1} (F_* - f_bar)^T]
/// in F_*, which is Sigma F_* + F_* k_bar = L k_bar + Sigma f_bar.
inline MatrixXd solve_test_means(
  const MatrixXd & lambda, const MatrixXd & sigma, const TestPosterior & post,
  const SchurFactor & k_bar_schur)
{
  const MatrixXd rhs = lambda * post.k_bar + sigma * post.f_bar;
  return solve_sylvester(sigma, post.k_bar, rhs, k_bar_schur);
}

struct TestInference
{
  MatrixXd f_star;  ///< K x M
  VariationalState state;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

/// Alternates the test E-step (prior means F_* e_d) with the Sylvester
/// solve for F_*, holding beta and Sigma fixed. The monitored objective is
/// the sum of the test document bounds plus log p(F_* | F, K~).
inline TestInference infer_test(
  const ModelParams & model, const Corpus & test, const TestPosterior & post,
  const TrainConfig & config)
{
  config.validate();
  const Index m = static_cast<Index>(test.size());
  if (post.f_bar.cols() != m || post.k_bar.rows() != m) {
    throw ValidationError("infer_test: posterior does not match the test corpus size");
  }
  if (post.f_bar.rows() != model.num_topics) {
    throw ValidationError("infer_test: posterior has the wrong number of topics");
  }
  if (test.vocab_size != model.vocab_size()) {
    throw ValidationError("infer_test: test vocabulary size differs from the model");
  }
  const SchurFactor k_bar_schur = real_schur(post.k_bar);
  const TopicPrior prior(model.sigma);
  const MatrixXd log_beta = log_of(model.beta);
  const EStepOptions eopts{config.estep_max_iters, config.estep_grad_tol, config.max_halvings};

  TestInference r;
  r.f_star = post.f_bar;
  r.state.docs.resize(m);
  for (Index d = 0; d < m; ++d) {
    r.state.docs[d] = initial_doc_state(model.num_topics);
    r.state.docs[d].lambda = post.f_bar.col(d);
  }
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= config.max_em_iters; ++it) {
    parallel_for(
      m, config.threads, [&](std::size_t d) {
        r.state.docs[d] = optimize_document(
          test.docs[d], r.f_star.col(d), prior, model.beta, log_beta, eopts,
          std::move(r.state.docs[d]));
      });
    r.f_star = solve_test_means(r.state.lambda_matrix(), model.sigma, post, k_bar_schur);
    double value = test_prior_log_density(r.f_star, post);
    std::vector<double> bounds(m);
    parallel_for(
      m, config.threads, [&](std::size_t d) {
        bounds[d] = doc_bound(test.docs[d], r.state.docs[d], prior, r.f_star.col(d), log_beta);
      });
    for (double b : bounds) {
      value += b;
    }
    if (!std::isfinite(value)) {
      throw NumericalError("infer_test: objective is not finite at iteration " + std::to_string(it));
    }
    r.objective_trace.push_back(value);
    r.iterations = it;
    if (it > 1 && std::abs(value - previous) < config.em_rel_tol * std::abs(value)) {
      r.converged = true;
      break;
    }
    previous = value;
  }
  return r;
}

/// log p(w_d | eta = lambda_d) = sum_n log sum_i theta_i(lambda_d) beta_{i,w_n}:
/// the document likelihood at the variational mean of eta.
inline double doc_log_likelihood(const Document & doc, const VectorXd & lambda, const MatrixXd & beta)
{
  const VectorXd theta = softmax_theta(lambda);
  double ll = 0.0;
  for (const auto & e : doc.entries) {
    ll += static_cast<double>(e.count) * std::log(theta.dot(beta.col(e.word)));
  }
  return ll;
}

/// How log p(w_d | F_*) is estimated for perplexity.
enum class LikelihoodEstimate
{
  /// The per-document variational lower bound (all terms except the GP
  /// prior); gives an upper bound on perplexity. Default.
  bound,
  /// Word likelihood at theta(lambda_d). A point estimate, not a bound.
  plugin,
};

inline std::vector<double> test_log_likelihoods(
  const ModelParams & model, const Corpus & test, const MatrixXd & f_star,
  const VariationalState & state, LikelihoodEstimate how)
{
  std::vector<double> out(test.size());
  if (how == LikelihoodEstimate::plugin) {
    for (std::size_t d = 0; d < test.size(); ++d) {
      out[d] = doc_log_likelihood(test.docs[d], state.docs[d].lambda, model.beta);
    }
    return out;
  }
  const TopicPrior prior(model.sigma);
  const MatrixXd log_beta = log_of(model.beta);
  for (std::size_t d = 0; d < test.size(); ++d) {
    out[d] = doc_bound(test.docs[d], state.docs[d], prior, f_star.col(d), log_beta);
  }
  return out;
}

/// exp(-sum_d log p(w_d | F_*) / sum_d N_d), bound-based unless `how` says
/// otherwise.
inline double perplexity_conditional(
  const ModelParams & model, const Corpus & test, const MatrixXd & f_star,
  const VariationalState & state, LikelihoodEstimate how = LikelihoodEstimate::bound)
{
  const double words = static_cast<double>(test.total_words());
  if (!(words > 0.0)) {
    throw ValidationError("perplexity: test corpus has no words");
  }
  double ll = 0.0;
  for (double v : test_log_likelihoods(model, test, f_star, state, how)) {
    ll += v;
  }
  return std::exp(-ll / words);
}

/// exp(-(sum_d log p(w_d | F_*) + log p(F_* | F, K~)) / sum_d N_d)
inline double perplexity_joint(
  const ModelParams & model, const Corpus & test, const MatrixXd & f_star,
  const VariationalState & state, const TestPosterior & post,
  LikelihoodEstimate how = LikelihoodEstimate::bound)
{
  const double words = static_cast<double>(test.total_words());
  if (!(words > 0.0)) {
    throw ValidationError("perplexity: test corpus has no words");
  }
  double ll = test_prior_log_density(f_star, post);
  for (double v : test_log_likelihoods(model, test, f_star, state, how)) {
    ll += v;
  }
  return std::exp(-ll / words);
}

/// Writes one row per document: 1-based index, the K coordinates, and the
/// label when labels are given. Values use "%.17g".
inline void export_embedding(
  const std::string & path, const MatrixXd & embedding,
  const std::vector<std::optional<int>> * labels = nullptr)
{
  if (labels && labels->size() != static_cast<std::size_t>(embedding.cols())) {
    throw ValidationError("export_embedding: label count does not match the number of documents");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open " + path + " for writing");
  }
  for (Index d = 0; d < embedding.cols(); ++d) {
    std::string line = std::to_string(d + 1);
    for (Index i = 0; i < embedding.rows(); ++i) {
      line += ',';
      line += format_double(embedding(i, d));
    }
    if (labels) {
      line += ',';
      line += (*labels)[d] ? std::to_string(*(*labels)[d]) : std::string("-");
    }
    out << line << '\n';
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

struct Embedding
{
  MatrixXd coords;  ///< K x D
  std::vector<std::optional<int>> labels;
};

/// Reads an embedding CSV written by export_embedding.
inline Embedding read_embedding(const std::string & path, bool has_labels)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError(path + ": cannot open");
  }
  std::vector<std::vector<double>> rows;
  Embedding e;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cells.push_back(cell);
    }
    const std::size_t ncoord = cells.size() - 1 - (has_labels ? 1 : 0);
    if (cells.size() < (has_labels ? 3u : 2u) || (!rows.empty() && rows.front().size() != ncoord)) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": unexpected number of columns");
    }
    std::vector<double> row;
    try {
      for (std::size_t i = 1; i <= ncoord; ++i) {
        row.push_back(std::stod(cells[i]));
      }
      if (has_labels) {
        const auto & l = cells.back();
        e.labels.push_back(l == "-" ? std::nullopt : std::optional<int>(std::stoi(l)));
      }
    } catch (const std::logic_error &) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": bad value");
    }
    rows.push_back(std::move(row));
  }
  e.coords.resize(rows.empty() ? 0 : rows.front().size(), rows.size());
  for (std::size_t d = 0; d < rows.size(); ++d) {
    for (std::size_t i = 0; i < rows[d].size(); ++i) {
      e.coords(i, d) = rows[d][i];
    }
  }
  return e;
}

/// 1-nearest-neighbor classification accuracy of the embedding columns
/// under Euclidean distance. With folds == 0 (or folds >= D) every point is
/// held out in turn; otherwise point d belongs to fold d % folds and is
/// classified using the points of the other folds. Ties go to the lower
/// index.
inline double knn_separability(
  const MatrixXd & embedding, const std::vector<int> & labels, int folds = 0)
{
  const Index n = embedding.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw ValidationError("knn_separability: label count does not match the number of points");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw ValidationError("knn_separability: need at least two classes");
  }
  const bool loo = folds <= 0 || folds >= n;
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index best_j = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == i || (!loo && (j % folds) == (i % folds))) {
        continue;
      }
      const double dist = (embedding.col(i) - embedding.col(j)).squaredNorm();
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    if (best_j >= 0 && labels[best_j] == labels[i]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace gptm

#endif  // GPTM__PREDICT_HPP_
