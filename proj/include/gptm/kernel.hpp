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
/// \brief Document kernels: k-nearest-neighbor (cosine) and must-link.

#ifndef GPTM__KERNEL_HPP_
#define GPTM__KERNEL_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gptm/corpus.hpp"
#include "gptm/error.hpp"
#include "gptm/linalg.hpp"
#include "gptm/parallel.hpp"

namespace gptm
{

enum class KernelKind {nn, ml, identity, external};

inline const char * to_string(KernelKind k)
{
  switch (k) {
    case KernelKind::nn: return "nn";
    case KernelKind::ml: return "ml";
    case KernelKind::identity: return "identity";
    case KernelKind::external: return "external";
  }
  return "?";
}

/// Symmetric positive definite document kernel.
struct KernelMatrix
{
  KernelKind kind = KernelKind::identity;
  MatrixXd values;
  double gamma = 1.0;
  double c = 1.0;
  std::optional<double> sigma2;  ///< NN kernels only
  int k = 0;                     ///< NN kernels only
  double jitter = 0.0;           ///< total diagonal jitter added (external kernels)

  Index dim() const {return values.rows();}
};

/// Unordered document pairs, stored 0-indexed with first < second.
struct ConstraintSet
{
  std::set<std::pair<int, int>> pairs;

  void add(int i, int j)
  {
    if (i == j) {
      return;
    }
    pairs.insert({std::min(i, j), std::max(i, j)});
  }

  bool contains(int i, int j) const
  {
    return pairs.count({std::min(i, j), std::max(i, j)}) > 0;
  }

  std::size_t size() const {return pairs.size();}
};

/// Diagonal margin for the automatic choice of c.
constexpr double kAutoDiagonalMargin = 1e-3;

/// Cosine distance 1 - <x, y> / (|x| |y|) between sparse count vectors.
/// Clamped to [0, 1] for nonnegative counts.
inline double cosine_distance(const Document & x, const Document & y)
{
  double nx = 0.0, ny = 0.0, dot = 0.0;
  for (const auto & e : x.entries) {
    nx += static_cast<double>(e.count) * e.count;
  }
  for (const auto & e : y.entries) {
    ny += static_cast<double>(e.count) * e.count;
  }
  if (nx <= 0.0 || ny <= 0.0) {
    throw ValidationError("cosine_distance: zero vector has no direction");
  }
  auto ix = x.entries.begin();
  auto iy = y.entries.begin();
  while (ix != x.entries.end() && iy != y.entries.end()) {
    if (ix->word < iy->word) {
      ++ix;
    } else if (iy->word < ix->word) {
      ++iy;
    } else {
      dot += static_cast<double>(ix->count) * iy->count;
      ++ix;
      ++iy;
    }
  }
  // sqrt(nx * ny) is exact for identical integer vectors, giving d = 0 exactly.
  const double d = 1.0 - dot / std::sqrt(nx * ny);
  return std::clamp(d, 0.0, 1.0);
}

/// Cosine distance between dense vectors (used by tests and external callers).
inline double cosine_distance(const VectorXd & x, const VectorXd & y)
{
  const double nx = x.squaredNorm();
  const double ny = y.squaredNorm();
  if (nx <= 0.0 || ny <= 0.0) {
    throw ValidationError("cosine_distance: zero vector has no direction");
  }
  return 1.0 - x.dot(y) / std::sqrt(nx * ny);
}

/// Smallest eigenvalue of a symmetric matrix (dense eigensolver).
inline double smallest_eigenvalue(const MatrixXd & a)
{
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Certifies positive definiteness by a Cholesky attempt; on failure the
/// error reports the smallest eigenvalue.
inline void certify_positive_definite(const MatrixXd & values, const std::string & what)
{
  try {
    (void)spd_factorize(values);
  } catch (const NotPositiveDefinite &) {
    throw NumericalError(
            what + " is not positive definite (smallest eigenvalue " +
            std::to_string(smallest_eigenvalue(values)) + ")");
  }
}

/// Indices of the k nearest documents to `query` among `pool`, under cosine
/// distance. Ties go to the lower pool index. `skip` excludes one pool entry.
inline std::vector<std::pair<int, double>> nearest_neighbors(
  const Document & query, const Corpus & pool, int k, std::optional<int> skip = std::nullopt)
{
  std::vector<std::pair<double, int>> cand;
  cand.reserve(pool.size());
  for (int j = 0; j < static_cast<int>(pool.size()); ++j) {
    if (skip && *skip == j) {
      continue;
    }
    cand.push_back({cosine_distance(query, pool.docs[j]), j});
  }
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
  std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
  std::vector<std::pair<int, double>> out;
  out.reserve(kk);
  for (std::size_t i = 0; i < kk; ++i) {
    out.push_back({cand[i].second, cand[i].first});
  }
  return out;
}

/// Largest off-diagonal absolute row sum, the Gershgorin radius.
inline double max_offdiagonal_row_sum(const MatrixXd & values)
{
  double best = 0.0;
  for (Index i = 0; i < values.rows(); ++i) {
    best = std::max(best, values.row(i).cwiseAbs().sum() - std::abs(values(i, i)));
  }
  return best;
}

/// k-nearest-neighbor kernel over the documents of `corpus`. The kNN graph
/// is symmetrized; linked pairs get gamma * exp(-d / (2 sigma2)), the
/// diagonal gets c. With c unset, c = gamma * max_degree * (1 + 1e-3),
/// which makes the matrix strictly diagonally dominant.
inline KernelMatrix build_knn_kernel(
  const Corpus & corpus, int k, double gamma, double sigma2, std::optional<double> c = {},
  unsigned threads = 1)
{
  const int n = static_cast<int>(corpus.size());
  if (k < 1) {
    throw ValidationError("build_knn_kernel: k must be positive");
  }
  if (k >= n) {
    throw KernelConstructionError(
            "build_knn_kernel: k must be < D (k=" + std::to_string(k) + ", D=" +
            std::to_string(n) + ")");
  }
  if (!(gamma > 0.0) || !(sigma2 > 0.0) || (c && !(*c > 0.0))) {
    throw ValidationError("build_knn_kernel: gamma, sigma2 and c must be positive");
  }
  std::vector<std::vector<std::pair<int, double>>> nn(n);
  parallel_for(
    n, threads, [&](std::size_t i) {
      nn[i] = nearest_neighbors(corpus.docs[i], corpus, k, static_cast<int>(i));
    });

  KernelMatrix km;
  km.kind = KernelKind::nn;
  km.gamma = gamma;
  km.sigma2 = sigma2;
  km.k = k;
  km.values = MatrixXd::Zero(n, n);
  std::vector<int> degree(n, 0);
  for (int i = 0; i < n; ++i) {
    for (const auto & [j, d] : nn[i]) {
      if (km.values(i, j) == 0.0) {
        const double v = gamma * std::exp(-d / (2.0 * sigma2));
        km.values(i, j) = v;
        km.values(j, i) = v;
        ++degree[i];
        ++degree[j];
      }
    }
  }
  const int max_degree = n > 0 ? *std::max_element(degree.begin(), degree.end()) : 0;
  km.c = c ? *c : gamma * max_degree * (1.0 + kAutoDiagonalMargin);
  km.values.diagonal().setConstant(km.c);
  certify_positive_definite(km.values, "NN kernel");
  return km;
}

/// Closes a constraint set transitively over documents [0, n).
inline ConstraintSet transitive_closure(const ConstraintSet & constraints, int n)
{
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };
  for (const auto & [i, j] : constraints.pairs) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw ValidationError(
              "must-link constraint (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
              ") outside [1, " + std::to_string(n) + "]");
    }
    const int a = find(i), b = find(j);
    if (a != b) {
      parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    groups[find(i)].push_back(i);
  }
  ConstraintSet closed;
  for (const auto & [root, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        closed.add(members[a], members[b]);
      }
    }
  }
  return closed;
}

/// Must-link kernel: gamma on transitively closed constraint pairs, c on
/// the diagonal, 0 elsewhere. c unset picks the same diagonal-dominance
/// rule as the NN kernel.
inline KernelMatrix build_ml_kernel(
  const ConstraintSet & constraints, int n, double gamma, std::optional<double> c = {})
{
  if (n < 1) {
    throw ValidationError("build_ml_kernel: D must be positive");
  }
  if (!(gamma > 0.0) || (c && !(*c > 0.0))) {
    throw ValidationError("build_ml_kernel: gamma and c must be positive");
  }
  const ConstraintSet closed = transitive_closure(constraints, n);
  KernelMatrix km;
  km.kind = KernelKind::ml;
  km.gamma = gamma;
  km.values = MatrixXd::Zero(n, n);
  std::vector<int> degree(n, 0);
  for (const auto & [i, j] : closed.pairs) {
    km.values(i, j) = gamma;
    km.values(j, i) = gamma;
    ++degree[i];
    ++degree[j];
  }
  const int max_degree = *std::max_element(degree.begin(), degree.end());
  // An empty constraint set leaves only the diagonal; keep auto c positive.
  km.c = c ? *c : gamma * std::max(max_degree, 1) * (1.0 + kAutoDiagonalMargin);
  km.values.diagonal().setConstant(km.c);
  certify_positive_definite(km.values, "ML kernel");
  return km;
}

/// Every pair of labeled documents sharing a label becomes a must-link pair.
inline ConstraintSet labels_to_constraints(const std::vector<std::optional<int>> & labels)
{
  std::map<int, std::vector<int>> by_label;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (labels[i]) {
      by_label[*labels[i]].push_back(i);
    }
  }
  ConstraintSet out;
  for (const auto & [label, members] : by_label) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        out.add(members[a], members[b]);
      }
    }
  }
  return out;
}

/// Reads "i j" pairs (1-indexed), one per line; '#' starts a comment.
inline ConstraintSet load_constraints(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError(path + ": cannot open");
  }
  ConstraintSet out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream ss(line);
    long i = 0, j = 0;
    std::string rest;
    if (!(ss >> i >> j) || (ss >> rest) || i < 1 || j < 1) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": expected 'i j' with 1-indexed ids");
    }
    out.add(static_cast<int>(i - 1), static_cast<int>(j - 1));
  }
  return out;
}

/// Identity kernel (used by the KI variants).
inline KernelMatrix identity_kernel(int n)
{
  KernelMatrix km;
  km.kind = KernelKind::identity;
  km.values = MatrixXd::Identity(n, n);
  km.gamma = 0.0;
  km.c = 1.0;
  return km;
}

constexpr int kMaxJitterEscalations = 3;

/// Adds eps * I with eps = 1e-8 * trace / n, escalating tenfold, until the
/// matrix factorizes. Returns the total jitter added. Throws after
/// kMaxJitterEscalations failed escalations.
inline double apply_jitter_until_pd(MatrixXd & values, const std::string & what)
{
  const Index n = values.rows();
  const double base = 1e-8 * values.trace() / static_cast<double>(n);
  double added = 0.0;
  for (int attempt = 0; ; ++attempt) {
    try {
      (void)spd_factorize(values);
      return added;
    } catch (const NotPositiveDefinite &) {
      if (attempt >= kMaxJitterEscalations || !(base > 0.0)) {
        throw NumericalError(
                what + " is not positive definite after jitter (smallest eigenvalue " +
                std::to_string(smallest_eigenvalue(values)) + ")");
      }
      const double eps = base * std::pow(10.0, attempt);
      values.diagonal().array() += eps;
      added += eps;
    }
  }
}

/// Wraps a user supplied kernel matrix: must be square and symmetric to
/// rounding; it is symmetrized exactly and PD-certified with jitter.
inline KernelMatrix external_kernel(MatrixXd values)
{
  if (values.rows() != values.cols() || values.rows() == 0) {
    throw ValidationError("external kernel must be a non-empty square matrix");
  }
  const double asym = (values - values.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, values.cwiseAbs().maxCoeff())) {
    throw ValidationError("external kernel is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  KernelMatrix km;
  km.kind = KernelKind::external;
  km.values = symmetrize(values);
  km.jitter = apply_jitter_until_pd(km.values, "external kernel");
  km.gamma = 0.0;
  km.c = km.values.diagonal().mean();
  return km;
}

/// Cross and test blocks of the joint kernel over training and test
/// documents.
struct TestKernelBlocks
{
  MatrixXd star_f;     ///< M x D
  MatrixXd star_star;  ///< M x M
};

/// NN kernel blocks for test documents: each test document links to its k
/// nearest training documents with the training (k, gamma, sigma2); test
/// documents are not linked to each other and carry c on the diagonal.
inline TestKernelBlocks knn_test_blocks(
  const KernelMatrix & train_kernel, const Corpus & train, const Corpus & test,
  unsigned threads = 1)
{
  if (train_kernel.kind != KernelKind::nn || !train_kernel.sigma2) {
    throw ValidationError("knn_test_blocks: training kernel is not an NN kernel");
  }
  const int m = static_cast<int>(test.size());
  const int n = static_cast<int>(train.size());
  TestKernelBlocks blocks;
  blocks.star_f = MatrixXd::Zero(m, n);
  blocks.star_star = MatrixXd::Identity(m, m) * train_kernel.c;
  parallel_for(
    m, threads, [&](std::size_t i) {
      for (const auto & [j, d] : nearest_neighbors(test.docs[i], train, train_kernel.k)) {
        blocks.star_f(i, j) = train_kernel.gamma * std::exp(-d / (2.0 * *train_kernel.sigma2));
      }
    });
  return blocks;
}

/// ML kernel blocks for test documents. Test documents with a label link
/// (after closure over train and test together) to every labeled document
/// of the same class; unlabeled test documents are decoupled.
inline TestKernelBlocks ml_test_blocks(
  const KernelMatrix & train_kernel,
  const std::vector<std::optional<int>> & train_labels,
  const std::vector<std::optional<int>> & test_labels)
{
  const int n = static_cast<int>(train_labels.size());
  const int m = static_cast<int>(test_labels.size());
  std::vector<std::optional<int>> joint = train_labels;
  joint.insert(joint.end(), test_labels.begin(), test_labels.end());
  const ConstraintSet closed = transitive_closure(labels_to_constraints(joint), n + m);
  TestKernelBlocks blocks;
  blocks.star_f = MatrixXd::Zero(m, n);
  blocks.star_star = MatrixXd::Identity(m, m) * train_kernel.c;
  for (const auto & [i, j] : closed.pairs) {
    // i < j, so a pair touching the test side has j >= n.
    if (j < n) {
      continue;
    }
    if (i < n) {
      blocks.star_f(j - n, i) = train_kernel.gamma;
    } else {
      blocks.star_star(i - n, j - n) = train_kernel.gamma;
      blocks.star_star(j - n, i - n) = train_kernel.gamma;
    }
  }
  return blocks;
}

/// Blocks for a decoupled test set (identity training kernel).
inline TestKernelBlocks identity_test_blocks(int n, int m)
{
  return {MatrixXd::Zero(m, n), MatrixXd::Identity(m, m)};
}

}  // namespace gptm

#endif  // GPTM__KERNEL_HPP_
