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
/// \brief Variational EM training: E-step over documents, M-step over
/// (beta, Sigma, F), and the evidence lower bound.

#ifndef GPTM__VI_TRAIN_HPP_
#define GPTM__VI_TRAIN_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <vector>

#include "gptm/corpus.hpp"
#include "gptm/csv.hpp"
#include "gptm/error.hpp"
#include "gptm/estep.hpp"
#include "gptm/kernel.hpp"
#include "gptm/linalg.hpp"
#include "gptm/model.hpp"
#include "gptm/parallel.hpp"
#include "gptm/random.hpp"

namespace gptm
{

/// Added to every beta cell before normalization.
constexpr double kBetaFloor = 1e-10;

/// beta_{i,w} proportional to sum_d count_{d,w} phi_{d,w,i} (+ floor).
/// Documents are accumulated in order, so the result does not depend on how
/// the E-step was scheduled.
inline MatrixXd update_beta(
  const Corpus & corpus, const std::vector<DocState> & states, int num_topics)
{
  MatrixXd stats = MatrixXd::Zero(num_topics, corpus.vocab_size);
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto & doc = corpus.docs[d];
    const auto & phi = states[d].phi;
    for (std::size_t w = 0; w < doc.entries.size(); ++w) {
      stats.col(doc.entries[w].word) += static_cast<double>(doc.entries[w].count) *
        phi.row(w).transpose();
    }
  }
  stats.array() += kBetaFloor;
  for (Index i = 0; i < stats.rows(); ++i) {
    stats.row(i) /= stats.row(i).sum();
  }
  return stats;
}

/// Sigma = (1/D) (sum_d diag(nu2_d) + sum_d (lambda_d - F e_d)(lambda_d - F e_d)^T),
/// symmetrized.
inline MatrixXd update_sigma(const std::vector<DocState> & states, const MatrixXd & f)
{
  const Index k = f.rows();
  const auto n = static_cast<double>(states.size());
  if (states.empty()) {
    throw ValidationError("update_sigma: no documents");
  }
  MatrixXd sigma = MatrixXd::Zero(k, k);
  for (std::size_t d = 0; d < states.size(); ++d) {
    const VectorXd r = states[d].lambda - f.col(d);
    sigma.diagonal() += states[d].nu2;
    sigma.noalias() += r * r.transpose();
  }
  sigma /= n;
  return symmetrize(sigma);
}

/// Solves Sigma F + F K = L K (L = [lambda_1 ... lambda_D]). With an
/// identity kernel this is (Sigma + I) F = L.
inline MatrixXd update_F(
  const MatrixXd & lambda, const MatrixXd & sigma, const KernelPrior & kernel)
{
  if (kernel.is_identity()) {
    MatrixXd shifted = sigma;
    shifted.diagonal().array() += 1.0;
    return spd_factorize(shifted).solve(lambda);
  }
  const MatrixXd rhs = lambda * kernel.values();
  return solve_sylvester(sigma, kernel.values(), rhs, kernel.schur());
}

/// Model initialization: Sigma = I, F = 0, beta from corpus word
/// frequencies (+1) multiplied by independent Gamma(1) jitter per topic.
inline ModelParams initial_model(const Corpus & corpus, const TrainConfig & config)
{
  ModelParams m;
  m.num_topics = config.num_topics;
  m.variant = config.variant;
  const Index k = config.num_topics;
  const Index v = corpus.vocab_size;
  VectorXd freq = VectorXd::Ones(v);
  for (const auto & doc : corpus.docs) {
    for (const auto & e : doc.entries) {
      freq(e.word) += e.count;
    }
  }
  Rng rng(config.seed);
  m.beta.resize(k, v);
  for (Index i = 0; i < k; ++i) {
    for (Index w = 0; w < v; ++w) {
      m.beta(i, w) = freq(w) * rng.gamma(1.0);
    }
    m.beta.row(i) /= m.beta.row(i).sum();
  }
  m.sigma = MatrixXd::Identity(k, k);
  m.F = MatrixXd::Zero(k, corpus.size());
  return m;
}

struct ElboTerms
{
  double gp_prior = 0.0;  ///< log p(F | K)
  double documents = 0.0; ///< sum of per-document bounds

  double total() const {return gp_prior + documents;}
};

/// Per-document bounds under the current model, computed in document order.
inline std::vector<double> document_bounds(
  const ModelParams & model, const std::vector<DocState> & states, const Corpus & corpus,
  unsigned threads = 1)
{
  const TopicPrior prior(model.sigma);
  const MatrixXd log_beta = log_of(model.beta);
  std::vector<double> out(corpus.size());
  parallel_for(
    corpus.size(), threads, [&](std::size_t d) {
      out[d] = doc_bound(corpus.docs[d], states[d], prior, model.F.col(d), log_beta);
    });
  return out;
}

inline ElboTerms elbo_terms(
  const ModelParams & model, const VariationalState & state, const Corpus & corpus,
  const KernelPrior & kernel, unsigned threads = 1)
{
  ElboTerms t;
  t.gp_prior = kernel.log_density(model.F);
  for (double b : document_bounds(model, state.docs, corpus, threads)) {
    t.documents += b;
  }
  return t;
}

/// Evidence lower bound: log p(F | K) plus the per-document bounds.
inline double elbo(
  const ModelParams & model, const VariationalState & state, const Corpus & corpus,
  const KernelPrior & kernel, unsigned threads = 1)
{
  return elbo_terms(model, state, corpus, kernel, threads).total();
}

/// Runs the E-step for every document against prior means F e_d.
inline void run_estep(
  const Corpus & corpus, const MatrixXd & means, const MatrixXd & sigma, const MatrixXd & beta,
  const EStepOptions & opts, unsigned threads, std::vector<DocState> & states)
{
  const TopicPrior prior(sigma);
  const MatrixXd log_beta = log_of(beta);
  parallel_for(
    corpus.size(), threads, [&](std::size_t d) {
      states[d] = optimize_document(
        corpus.docs[d], means.col(d), prior, beta, log_beta, opts, std::move(states[d]));
    });
}

/// Re-certifies Sigma, applying escalating jitter if allowed.
inline void certify_sigma(MatrixXd & sigma, bool allow_jitter)
{
  if (allow_jitter) {
    (void)apply_jitter_until_pd(sigma, "topic covariance");
  } else {
    (void)spd_factorize(sigma);
  }
}

struct TrainResult
{
  ModelParams model;
  VariationalState state;
  std::vector<double> elbo_trace;
  int iterations = 0;
  bool converged = false;
  int stalled_line_searches = 0;  ///< documents whose last E-step stalled
};

/// Performs the M-step in place: beta, then Sigma, F, and one more
/// Sigma, F alternation (Sigma and F depend on each other).
inline void run_mstep(
  const Corpus & corpus, const VariationalState & state, const KernelPrior & kernel,
  const TrainConfig & config, ModelParams & model)
{
  model.beta = update_beta(corpus, state.docs, model.num_topics);
  const MatrixXd lambda = state.lambda_matrix();
  for (int pass = 0; pass < 2; ++pass) {
    if (!sigma_is_fixed(model.variant)) {
      model.sigma = update_sigma(state.docs, model.F);
      certify_sigma(model.sigma, config.sigma_jitter);
    }
    model.F = update_F(lambda, model.sigma, kernel);
  }
}

/// Called after every M-step with the iteration number.
using MStepHook = std::function<void(int, const ModelParams &, const VariationalState &)>;

/// Variational EM. Alternates a full E-step and an M-step and records the
/// ELBO after each iteration; stops when the relative ELBO change drops
/// below em_rel_tol or after max_em_iters iterations.
inline TrainResult train(
  const Corpus & corpus, const KernelMatrix & kernel, const TrainConfig & config,
  std::ostream * log = nullptr, const MStepHook & after_mstep = {})
{
  config.validate();
  if (corpus.size() == 0) {
    throw ValidationError("train: empty corpus");
  }
  if (kernel.dim() != static_cast<Index>(corpus.size())) {
    throw ValidationError(
            "train: kernel dimension " + std::to_string(kernel.dim()) + " does not match D=" +
            std::to_string(corpus.size()));
  }
  const KernelPrior kprior = KernelPrior::for_variant(kernel, config.variant);

  TrainResult r;
  r.model = initial_model(corpus, config);
  r.state.docs.assign(corpus.size(), initial_doc_state(config.num_topics));
  const EStepOptions eopts{config.estep_max_iters, config.estep_grad_tol, config.max_halvings};

  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= config.max_em_iters; ++it) {
    run_estep(corpus, r.model.F, r.model.sigma, r.model.beta, eopts, config.threads, r.state.docs);
    run_mstep(corpus, r.state, kprior, config, r.model);
    if (after_mstep) {
      after_mstep(it, r.model, r.state);
    }
    const double value = elbo(r.model, r.state, corpus, kprior, config.threads);
    r.iterations = it;
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "train: ELBO is not finite at iteration " << it;
      if (!r.elbo_trace.empty()) {
        msg << " (previous ELBO " << r.elbo_trace.back() << ")";
      }
      msg << "; Sigma diagonal = [" << r.model.sigma.diagonal().transpose() << "]";
      throw NumericalError(msg.str());
    }
    r.elbo_trace.push_back(value);
    if (log) {
      *log << "iteration " << it << " elbo " << format_double(value) << '\n';
    }
    if (it > 1 && std::abs(value - previous) < config.em_rel_tol * std::abs(value)) {
      r.converged = true;
      break;
    }
    previous = value;
  }
  for (const auto & st : r.state.docs) {
    r.stalled_line_searches += st.stalled ? 1 : 0;
  }
  return r;
}

}  // namespace gptm

#endif  // GPTM__VI_TRAIN_HPP_
