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
/// \brief Model parameters, variational state and training configuration.

#ifndef GPTM__MODEL_HPP_
#define GPTM__MODEL_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gptm/error.hpp"
#include "gptm/kernel.hpp"
#include "gptm/linalg.hpp"

namespace gptm
{

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

/// Which of Sigma and the document kernel are learned / used.
///   full  : Sigma learned, kernel used
///   si    : Sigma = I fixed, kernel used
///   ki    : Sigma learned, kernel replaced by I
///   siki  : both fixed to identity
enum class Variant {full, si, ki, siki};

inline bool sigma_is_fixed(Variant v) {return v == Variant::si || v == Variant::siki;}
inline bool kernel_is_identity(Variant v) {return v == Variant::ki || v == Variant::siki;}

inline const char * to_string(Variant v)
{
  switch (v) {
    case Variant::full: return "full";
    case Variant::si: return "si";
    case Variant::ki: return "ki";
    case Variant::siki: return "siki";
  }
  return "?";
}

inline Variant parse_variant(const std::string & s)
{
  if (s == "full") {return Variant::full;}
  if (s == "si") {return Variant::si;}
  if (s == "ki") {return Variant::ki;}
  if (s == "siki") {return Variant::siki;}
  throw ValidationError("unknown variant '" + s + "' (expected full, si, ki or siki)");
}

struct ModelParams
{
  int num_topics = 0;
  Variant variant = Variant::full;
  MatrixXd beta;   ///< K x V, rows on the simplex
  MatrixXd sigma;  ///< K x K topic covariance
  MatrixXd F;      ///< K x D GP means, column d is the prior mean of document d

  Index vocab_size() const {return beta.cols();}
  Index num_docs() const {return F.cols();}
};

/// Variational parameters of one document. `phi` has one row per distinct
/// word of the document (entries order); repeated occurrences of a word
/// share that row.
struct DocState
{
  VectorXd lambda;
  VectorXd nu2;
  MatrixXd phi;
  double zeta = 1.0;
  double bound = 0.0;
  int iterations = 0;
  bool stalled = false;  ///< line search gave up at least once
  double step_lambda = 0.0;
  double step_log_nu2 = 0.0;
};

struct VariationalState
{
  std::vector<DocState> docs;

  /// K x D matrix [lambda_1 ... lambda_D].
  MatrixXd lambda_matrix() const
  {
    if (docs.empty()) {
      return {};
    }
    MatrixXd out(docs.front().lambda.size(), docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      out.col(d) = docs[d].lambda;
    }
    return out;
  }

  MatrixXd nu2_matrix() const
  {
    if (docs.empty()) {
      return {};
    }
    MatrixXd out(docs.front().nu2.size(), docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      out.col(d) = docs[d].nu2;
    }
    return out;
  }
};

struct TrainConfig
{
  int num_topics = 3;
  int max_em_iters = 100;
  double em_rel_tol = 1e-5;
  int estep_max_iters = 100;
  double estep_grad_tol = 1e-6;  ///< relative per-document bound improvement
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  unsigned threads = 1;
  int max_halvings = 30;
  /// Escalating diagonal jitter on Sigma if an update loses definiteness.
  bool sigma_jitter = true;

  void validate() const
  {
    if (num_topics < 1) {
      throw ValidationError("number of topics must be at least 1");
    }
    if (max_em_iters < 1 || estep_max_iters < 1 || max_halvings < 1) {
      throw ValidationError("iteration limits must be positive");
    }
    if (!(em_rel_tol > 0.0) || !(estep_grad_tol > 0.0)) {
      throw ValidationError("tolerances must be positive");
    }
  }
};

/// Gaussian prior N(mu, Sigma) over eta, with what the E-step needs from
/// Sigma precomputed.
struct TopicPrior
{
  SpdFactor factor;
  VectorXd inv_diag;

  explicit TopicPrior(const MatrixXd & sigma)
  : factor(spd_factorize(sigma)), inv_diag(factor.inverse_diagonal()) {}

  Index dim() const {return factor.dim();}
};

/// GP prior over the rows of F. With `identity` set the kernel is I_D and
/// nothing is factorized.
class KernelPrior
{
public:
  static KernelPrior identity(Index dim)
  {
    KernelPrior p;
    p.dim_ = dim;
    p.identity_ = true;
    return p;
  }

  static KernelPrior from_matrix(const MatrixXd & values)
  {
    KernelPrior p;
    p.dim_ = values.rows();
    p.identity_ = false;
    p.values_ = values;
    p.chol_ = spd_factorize(values);
    p.schur_ = real_schur(values);
    return p;
  }

  static KernelPrior for_variant(const KernelMatrix & kernel, Variant v)
  {
    return kernel_is_identity(v) || kernel.kind == KernelKind::identity ?
           identity(kernel.dim()) : from_matrix(kernel.values);
  }

  Index dim() const {return dim_;}
  bool is_identity() const {return identity_;}
  const MatrixXd & values() const {return values_;}
  const SchurFactor & schur() const {return *schur_;}
  const SpdFactor & chol() const {return *chol_;}

  /// log p(F | K) = sum over rows f_i of log N(f_i; 0, K).
  double log_density(const MatrixXd & f) const
  {
    const double k = static_cast<double>(f.rows());
    const double d = static_cast<double>(dim_);
    if (identity_) {
      return -0.5 * k * d * kLog2Pi - 0.5 * f.squaredNorm();
    }
    return -0.5 * k * chol_->log_det() - 0.5 * k * d * kLog2Pi - 0.5 * chol_->trace_quad(f);
  }

private:
  Index dim_ = 0;
  bool identity_ = true;
  MatrixXd values_;
  std::optional<SpdFactor> chol_;
  std::optional<SchurFactor> schur_;
};

}  // namespace gptm

#endif  // GPTM__MODEL_HPP_
