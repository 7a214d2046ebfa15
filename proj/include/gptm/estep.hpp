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
/// \brief Per-document variational inference (E-step).
///
/// The per-document bound is
///
///   E[log p(eta | mu, Sigma)] + E[log p(z | eta)] + E[log p(w | z, beta)] + H(q)
///
/// with q(eta) = N(lambda, diag(nu2)), q(z_n) = Discrete(phi_n), and the
/// log-normalizer of the softmax bounded through the auxiliary zeta.

#ifndef GPTM__ESTEP_HPP_
#define GPTM__ESTEP_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <utility>

#include "gptm/corpus.hpp"
#include "gptm/error.hpp"
#include "gptm/model.hpp"

namespace gptm
{

/// Floor on nu2 entries.
constexpr double kMinNu2 = 1e-10;
/// Armijo sufficient-increase constant.
constexpr double kArmijo = 1e-4;

inline double log_sum_exp(const VectorXd & x)
{
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) {
    return m;
  }
  return m + std::log((x.array() - m).exp().sum());
}

/// Softmax map from R^K to the topic simplex.
inline VectorXd softmax_theta(const VectorXd & eta)
{
  const double m = eta.maxCoeff();
  VectorXd e = (eta.array() - m).exp();
  return e / e.sum();
}

/// phi_{w,i} proportional to exp(lambda_i) beta_{i,w}, one row per distinct
/// word of `doc`.
inline MatrixXd update_phi(const VectorXd & lambda, const MatrixXd & beta, const Document & doc)
{
  const Index k = lambda.size();
  const VectorXd w = (lambda.array() - lambda.maxCoeff()).exp();
  MatrixXd phi(doc.entries.size(), k);
  for (std::size_t n = 0; n < doc.entries.size(); ++n) {
    const int word = doc.entries[n].word;
    double total = 0.0;
    for (Index i = 0; i < k; ++i) {
      phi(n, i) = w(i) * beta(i, word);
      total += phi(n, i);
    }
    if (!(total > 0.0)) {
      throw NumericalError(
              "update_phi: word " + std::to_string(word + 1) + " has zero probability under every topic");
    }
    phi.row(n) /= total;
  }
  return phi;
}

/// zeta = sum_i exp(lambda_i + nu2_i / 2), evaluated through log-sum-exp.
inline double update_zeta(const VectorXd & lambda, const VectorXd & nu2)
{
  return std::exp(log_sum_exp(lambda + 0.5 * nu2));
}

/// Count-weighted topic totals sum_n phi_n.
inline VectorXd phi_totals(const MatrixXd & phi, const Document & doc)
{
  VectorXd s = VectorXd::Zero(phi.cols());
  for (std::size_t n = 0; n < doc.entries.size(); ++n) {
    s += static_cast<double>(doc.entries[n].count) * phi.row(n).transpose();
  }
  return s;
}

/// zeta^{-1} * sum_i exp(lambda_i + nu2_i / 2) without forming either factor.
inline double zeta_ratio(const VectorXd & lambda, const VectorXd & nu2, double zeta)
{
  return std::exp(log_sum_exp(lambda + 0.5 * nu2) - std::log(zeta));
}

struct DocGradients
{
  VectorXd lambda;
  VectorXd nu2;
};

/// Gradients of the per-document bound in lambda and nu2 at fixed phi, zeta.
inline DocGradients doc_gradients(
  const VectorXd & lambda, const VectorXd & nu2, double zeta, const MatrixXd & phi,
  const Document & doc, const TopicPrior & prior, const VectorXd & mu)
{
  const double n = static_cast<double>(doc.total());
  const VectorXd e = (lambda + 0.5 * nu2).array().exp();
  DocGradients g;
  g.lambda = -prior.factor.solve(VectorXd(lambda - mu)) + phi_totals(phi, doc) - (n / zeta) * e;
  g.nu2 = -0.5 * prior.inv_diag.array() - (n / (2.0 * zeta)) * e.array() + 0.5 / nu2.array();
  return g;
}

/// The four groups of bound terms for one document.
struct DocBoundTerms
{
  double eta = 0.0;      ///< E_q[log p(eta | mu, Sigma)]
  double topics = 0.0;   ///< sum_n E_q[log p(z_n | eta)] (zeta bound)
  double words = 0.0;    ///< sum_n E_q[log p(w_n | z_n, beta)]
  double entropy = 0.0;  ///< H(q(eta)) + H(q(z))

  double total() const {return eta + topics + words + entropy;}
};

inline DocBoundTerms doc_bound_terms(
  const Document & doc, const VectorXd & lambda, const VectorXd & nu2, const MatrixXd & phi,
  double zeta, const TopicPrior & prior, const VectorXd & mu, const MatrixXd & log_beta)
{
  const Index k = lambda.size();
  const double n = static_cast<double>(doc.total());
  DocBoundTerms t;
  t.eta = -0.5 * prior.factor.log_det() - 0.5 * static_cast<double>(k) * kLog2Pi -
    0.5 * (nu2.dot(prior.inv_diag) + prior.factor.quad_form(lambda - mu));
  const VectorXd s = phi_totals(phi, doc);
  t.topics = s.dot(lambda) - n * (zeta_ratio(lambda, nu2, zeta) - 1.0 + std::log(zeta));
  double words = 0.0;
  double phi_entropy = 0.0;
  for (std::size_t w = 0; w < doc.entries.size(); ++w) {
    const double c = doc.entries[w].count;
    const int word = doc.entries[w].word;
    for (Index i = 0; i < k; ++i) {
      const double p = phi(w, i);
      if (p > 0.0) {
        words += c * p * log_beta(i, word);
        phi_entropy -= c * p * std::log(p);
      }
    }
  }
  t.words = words;
  t.entropy = 0.5 * (nu2.array().log() + kLog2Pi + 1.0).sum() + phi_entropy;
  return t;
}

inline double doc_bound(
  const Document & doc, const VectorXd & lambda, const VectorXd & nu2, const MatrixXd & phi,
  double zeta, const TopicPrior & prior, const VectorXd & mu, const MatrixXd & log_beta)
{
  return doc_bound_terms(doc, lambda, nu2, phi, zeta, prior, mu, log_beta).total();
}

inline double doc_bound(
  const Document & doc, const DocState & st, const TopicPrior & prior, const VectorXd & mu,
  const MatrixXd & log_beta)
{
  return doc_bound(doc, st.lambda, st.nu2, st.phi, st.zeta, prior, mu, log_beta);
}

/// Elementwise log of beta, with log 0 = -inf.
inline MatrixXd log_of(const MatrixXd & beta)
{
  return beta.array().log().matrix();
}

/// Initial variational parameters: lambda = 0, nu2 = 1.
inline DocState initial_doc_state(Index k)
{
  DocState st;
  st.lambda = VectorXd::Zero(k);
  st.nu2 = VectorXd::Ones(k);
  st.zeta = update_zeta(st.lambda, st.nu2);
  return st;
}

namespace detail
{

/// One Armijo backtracking ascent step along `g`. The trial step starts at
/// twice the last accepted one and is halved until the increase condition
/// holds. Returns false if no step is accepted within `max_halvings`.
template<typename Objective>
bool armijo_step(
  Objective && f, VectorXd & x, double & fx, const VectorXd & g, double & step, int max_halvings)
{
  const double gg = g.squaredNorm();
  if (gg == 0.0) {
    return true;
  }
  double t = 2.0 * step;
  for (int h = 0; h <= max_halvings; ++h) {
    const VectorXd trial = x + t * g;
    const double ft = f(trial);
    if (std::isfinite(ft) && ft >= fx + kArmijo * t * gg) {
      x = trial;
      fx = ft;
      step = t;
      return true;
    }
    t *= 0.5;
  }
  return false;
}

}  // namespace detail

struct EStepOptions
{
  int max_iters = 100;
  double rel_tol = 1e-6;
  int max_halvings = 30;
};

/// Coordinate ascent on one document's bound, starting from `st`:
/// zeta (closed form), phi (closed form), then one Armijo gradient step on
/// lambda and one on log(nu2). Stops when the bound improves by less than
/// rel_tol * max(1, |bound|) or after max_iters sweeps. Every accepted step
/// is an ascent step, so the bound never decreases.
inline DocState optimize_document(
  const Document & doc, const VectorXd & mu, const TopicPrior & prior, const MatrixXd & beta,
  const MatrixXd & log_beta, const EStepOptions & opts, DocState st)
{
  const Index k = mu.size();
  if (st.lambda.size() != k) {
    st = initial_doc_state(k);
  }
  const double n = static_cast<double>(doc.total());
  if (!(st.step_lambda > 0.0)) {
    st.step_lambda = 0.5 / (n + 1.0);
  }
  if (!(st.step_log_nu2 > 0.0)) {
    st.step_log_nu2 = 0.5 / (n + 1.0);
  }
  const double log_nu2_floor = std::log(kMinNu2);
  double previous = -std::numeric_limits<double>::infinity();
  st.stalled = false;
  st.iterations = 0;

  for (int it = 0; it < opts.max_iters; ++it) {
    st.zeta = update_zeta(st.lambda, st.nu2);
    st.phi = update_phi(st.lambda, beta, doc);
    const VectorXd s = phi_totals(st.phi, doc);
    const double log_zeta = std::log(st.zeta);

    // lambda block at fixed (nu2, phi, zeta)
    auto f_lambda = [&](const VectorXd & l) {
        return -0.5 * prior.factor.quad_form(l - mu) + s.dot(l) -
               n * std::exp(log_sum_exp(l + 0.5 * st.nu2) - log_zeta);
      };
    {
      const DocGradients g = doc_gradients(st.lambda, st.nu2, st.zeta, st.phi, doc, prior, mu);
      double fx = f_lambda(st.lambda);
      if (!detail::armijo_step(f_lambda, st.lambda, fx, g.lambda, st.step_lambda, opts.max_halvings)) {
        st.stalled = true;
      }
    }

    // log(nu2) block at fixed (lambda, phi, zeta)
    auto f_nu = [&](const VectorXd & x) {
        const VectorXd v = x.cwiseMax(log_nu2_floor).array().exp();
        return -0.5 * v.dot(prior.inv_diag) -
               n * std::exp(log_sum_exp(st.lambda + 0.5 * v) - log_zeta) +
               0.5 * x.cwiseMax(log_nu2_floor).sum();
      };
    {
      const DocGradients g = doc_gradients(st.lambda, st.nu2, st.zeta, st.phi, doc, prior, mu);
      VectorXd x = st.nu2.array().log();
      const VectorXd gx = g.nu2.cwiseProduct(st.nu2);
      double fx = f_nu(x);
      if (detail::armijo_step(f_nu, x, fx, gx, st.step_log_nu2, opts.max_halvings)) {
        st.nu2 = x.cwiseMax(log_nu2_floor).array().exp();
      } else {
        st.stalled = true;
      }
    }

    st.bound = doc_bound(doc, st, prior, mu, log_beta);
    st.iterations = it + 1;
    if (!std::isfinite(st.bound)) {
      throw NumericalError("optimize_document: bound is not finite");
    }
    if (st.bound - previous < opts.rel_tol * std::max(1.0, std::abs(st.bound))) {
      break;
    }
    previous = st.bound;
  }
  return st;
}

}  // namespace gptm

#endif  // GPTM__ESTEP_HPP_
