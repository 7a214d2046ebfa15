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
/// \brief Dense factorizations and the Sylvester equation solver.
///
/// `solve_sylvester` solves A F + F B = C by the Bartels-Stewart method:
/// both coefficient matrices are brought to real Schur form, the rotated
/// right-hand side is solved against the quasi-triangular factors, and the
/// result is rotated back. When A and B are symmetric their Schur forms are
/// diagonal and the triangular solve collapses to an entrywise division.
/// The Schur factor of B may be computed once and reused across solves,
/// which is how training handles the fixed document kernel.

#ifndef GPTM__LINALG_HPP_
#define GPTM__LINALG_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "gptm/error.hpp"

namespace gptm
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline bool is_exactly_symmetric(const MatrixXd & a)
{
  if (a.rows() != a.cols()) {
    return false;
  }
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = j + 1; i < a.rows(); ++i) {
      if (a(i, j) != a(j, i)) {
        return false;
      }
    }
  }
  return true;
}

inline MatrixXd symmetrize(const MatrixXd & a)
{
  return 0.5 * (a + a.transpose());
}

/// Cholesky factor A = L L^T of a symmetric positive definite matrix.
class SpdFactor
{
public:
  /// Factorizes the lower triangle of `a`. Throws NotPositiveDefinite
  /// naming the first non-positive pivot (0-indexed).
  static SpdFactor factorize(const MatrixXd & a)
  {
    if (a.rows() != a.cols()) {
      throw ValidationError("spd_factorize: matrix is not square");
    }
    const Index n = a.rows();
    SpdFactor f;
    f.lower_ = MatrixXd::Zero(n, n);
    MatrixXd & l = f.lower_;
    double log_det = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
      if (!(pivot > 0.0) || !std::isfinite(pivot)) {
        throw NotPositiveDefinite(
                "matrix is not positive definite: pivot " + std::to_string(j) + " is " +
                std::to_string(pivot),
                j);
      }
      const double ljj = std::sqrt(pivot);
      l(j, j) = ljj;
      log_det += 2.0 * std::log(ljj);
      const Index rest = n - j - 1;
      if (rest > 0) {
        l.col(j).tail(rest) =
          (a.col(j).tail(rest) - l.block(j + 1, 0, rest, j) * l.row(j).head(j).transpose()) / ljj;
      }
    }
    f.log_det_ = log_det;
    return f;
  }

  Index dim() const {return lower_.rows();}
  const MatrixXd & lower() const {return lower_;}
  double log_det() const {return log_det_;}

  /// A^{-1} B
  MatrixXd solve(const MatrixXd & b) const
  {
    const auto l = lower_.triangularView<Eigen::Lower>();
    return l.transpose().solve(l.solve(b));
  }

  VectorXd solve(const VectorXd & b) const
  {
    const auto l = lower_.triangularView<Eigen::Lower>();
    return l.transpose().solve(l.solve(b));
  }

  /// v^T A^{-1} v
  double quad_form(const VectorXd & v) const
  {
    return lower_.triangularView<Eigen::Lower>().solve(v).squaredNorm();
  }

  /// Tr(X A^{-1} X^T) for X with dim() columns.
  double trace_quad(const MatrixXd & x) const
  {
    return lower_.triangularView<Eigen::Lower>().solve(x.transpose()).squaredNorm();
  }

  /// diag(A^{-1}) computed from L^{-1}.
  VectorXd inverse_diagonal() const
  {
    const Index n = dim();
    const MatrixXd linv =
      lower_.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n));
    return linv.colwise().squaredNorm().transpose();
  }

private:
  MatrixXd lower_;
  double log_det_ = 0.0;
};

inline SpdFactor spd_factorize(const MatrixXd & a)
{
  return SpdFactor::factorize(a);
}

/// Real Schur decomposition A = Q T Q^T with Q orthogonal and T upper
/// quasi-triangular (1x1 and 2x2 diagonal blocks).
struct SchurFactor
{
  MatrixXd q;
  MatrixXd t;
  /// True when T is exactly diagonal (symmetric input).
  bool diagonal = false;

  Index dim() const {return q.rows();}

  VectorXd eigenvalues() const {return t.diagonal();}

  /// Size (1 or 2) of the diagonal block starting at row i.
  Index block_size(Index i) const
  {
    return (i + 1 < t.rows() && t(i + 1, i) != 0.0) ? 2 : 1;
  }
};

/// Symmetric inputs take the spectral route (T diagonal, eigenvalues
/// ascending); everything else goes through Hessenberg QR iteration.
inline SchurFactor real_schur(const MatrixXd & a)
{
  if (a.rows() != a.cols()) {
    throw ValidationError("real_schur: matrix is not square");
  }
  if (!a.allFinite()) {
    throw ValidationError("real_schur: matrix has non-finite entries");
  }
  SchurFactor f;
  const Index n = a.rows();
  if (is_exactly_symmetric(a)) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    if (es.info() != Eigen::Success) {
      throw NumericalError("real_schur: symmetric eigensolver did not converge");
    }
    f.q = es.eigenvectors();
    f.t = MatrixXd::Zero(n, n);
    f.t.diagonal() = es.eigenvalues();
    f.diagonal = true;
    return f;
  }
  Eigen::RealSchur<MatrixXd> rs;
  rs.setMaxIterations(std::max<Index>(40 * n, 400));
  rs.compute(a);
  if (rs.info() != Eigen::Success) {
    throw NumericalError("real_schur: QR iteration did not converge");
  }
  f.q = rs.matrixU();
  f.t = rs.matrixT();
  // Clear the strictly-lower part outside 2x2 blocks so block detection
  // only sees genuine subdiagonal entries.
  for (Index j = 0; j < n; ++j) {
    for (Index i = j + 2; i < n; ++i) {
      f.t(i, j) = 0.0;
    }
  }
  f.diagonal = false;
  return f;
}

namespace detail
{

/// Solves T_A X + X T_B = R for quasi-upper-triangular T_A, T_B.
inline MatrixXd solve_quasi_triangular_sylvester(
  const SchurFactor & fa, const SchurFactor & fb, MatrixXd r)
{
  const MatrixXd & ta = fa.t;
  const MatrixXd & tb = fb.t;
  const Index m = ta.rows();
  const Index n = tb.rows();
  MatrixXd x = MatrixXd::Zero(m, n);
  const double scale = ta.cwiseAbs().maxCoeff() + tb.cwiseAbs().maxCoeff();

  Index j = 0;
  while (j < n) {
    const Index q = fb.block_size(j);
    // Move the already solved columns to the right-hand side.
    if (j > 0) {
      r.middleCols(j, q).noalias() -= x.leftCols(j) * tb.block(0, j, j, q);
    }
    Index i = m;
    while (i > 0) {
      // Find the start of the diagonal block that ends at row i - 1.
      Index p = 1;
      if (i >= 2 && ta(i - 1, i - 2) != 0.0) {
        p = 2;
      }
      const Index i0 = i - p;
      MatrixXd rhs = r.block(i0, j, p, q);
      if (i < m) {
        rhs.noalias() -= ta.block(i0, i, p, m - i) * x.block(i, j, m - i, q);
      }
      // (I_q kron T_A(ii) + T_B(jj)^T kron I_p) vec(X_ij) = vec(rhs)
      const Index s = p * q;
      MatrixXd sys = MatrixXd::Zero(s, s);
      const MatrixXd aii = ta.block(i0, i0, p, p);
      const MatrixXd bjj = tb.block(j, j, q, q);
      for (Index c = 0; c < q; ++c) {
        sys.block(c * p, c * p, p, p) += aii;
        for (Index c2 = 0; c2 < q; ++c2) {
          sys.block(c * p, c2 * p, p, p) += bjj(c2, c) * MatrixXd::Identity(p, p);
        }
      }
      Eigen::FullPivLU<MatrixXd> lu(sys);
      const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
      if (!(min_pivot > 1e3 * std::numeric_limits<double>::epsilon() * scale)) {
        throw NumericalError(
                "solve_sylvester: spectra of A and -B overlap (block pivot " +
                std::to_string(min_pivot) + ")");
      }
      const VectorXd v = lu.solve(Eigen::Map<const VectorXd>(rhs.data(), s));
      x.block(i0, j, p, q) = Eigen::Map<const MatrixXd>(v.data(), p, q);
      i = i0;
    }
    j += q;
  }
  return x;
}

}  // namespace detail

/// Relative residual ||AF + FB - C||_F / ((||A||_F + ||B||_F) max(||F||_F, 1)).
inline double sylvester_residual(
  const MatrixXd & a, const MatrixXd & b, const MatrixXd & c, const MatrixXd & f)
{
  const MatrixXd res = a * f + f * b - c;
  return res.norm() / ((a.norm() + b.norm()) * std::max(f.norm(), 1.0));
}

constexpr double kSylvesterTolerance = 1e-8;

/// Solves A F + F B = C given Schur factors of both coefficient matrices.
inline MatrixXd solve_sylvester_factored(
  const MatrixXd & a, const SchurFactor & fa,
  const MatrixXd & b, const SchurFactor & fb,
  const MatrixXd & c)
{
  if (a.rows() != a.cols() || b.rows() != b.cols() || c.rows() != a.rows() ||
    c.cols() != b.rows())
  {
    throw ValidationError("solve_sylvester: dimension mismatch");
  }
  if (fa.dim() != a.rows() || fb.dim() != b.rows()) {
    throw ValidationError("solve_sylvester: Schur factor dimension mismatch");
  }
  const MatrixXd rotated = fa.q.transpose() * c * fb.q;
  MatrixXd y;
  if (fa.diagonal && fb.diagonal) {
    const VectorXd alpha = fa.t.diagonal();
    const VectorXd beta = fb.t.diagonal();
    const double scale = alpha.cwiseAbs().maxCoeff() + beta.cwiseAbs().maxCoeff();
    y.resize(rotated.rows(), rotated.cols());
    for (Index j = 0; j < y.cols(); ++j) {
      for (Index i = 0; i < y.rows(); ++i) {
        const double denom = alpha(i) + beta(j);
        if (!(std::abs(denom) > 1e3 * std::numeric_limits<double>::epsilon() * scale)) {
          throw NumericalError(
                  "solve_sylvester: spectra of A and -B overlap (alpha_i + beta_j = " +
                  std::to_string(denom) + ")");
        }
        y(i, j) = rotated(i, j) / denom;
      }
    }
  } else {
    y = detail::solve_quasi_triangular_sylvester(fa, fb, rotated);
  }
  MatrixXd f = fa.q * y * fb.q.transpose();
  const double res = sylvester_residual(a, b, c, f);
  if (!(res <= kSylvesterTolerance)) {
    throw NumericalError(
            "solve_sylvester: relative residual " + std::to_string(res) + " exceeds tolerance");
  }
  return f;
}

/// Solves A F + F B = C, reusing a precomputed Schur factor of B.
inline MatrixXd solve_sylvester(
  const MatrixXd & a, const MatrixXd & b, const MatrixXd & c, const SchurFactor & b_schur)
{
  return solve_sylvester_factored(a, real_schur(a), b, b_schur, c);
}

/// Solves A F + F B = C.
inline MatrixXd solve_sylvester(const MatrixXd & a, const MatrixXd & b, const MatrixXd & c)
{
  return solve_sylvester(a, b, c, real_schur(b));
}

}  // namespace gptm

#endif  // GPTM__LINALG_HPP_
