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
/// \brief Sampling corpora from the generative model with a block
/// must-link kernel over document classes.
///
///   F rows ~ N(0, K_gen)
///   eta_d  ~ N(F e_d, Sigma_gen)
///   z_n    ~ Discrete(softmax(eta_d)),  w_n ~ Discrete(beta_{z_n})

#ifndef GPTM__SYNTHETIC_HPP_
#define GPTM__SYNTHETIC_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <vector>

#include "gptm/corpus.hpp"
#include "gptm/estep.hpp"
#include "gptm/kernel.hpp"
#include "gptm/linalg.hpp"
#include "gptm/random.hpp"

namespace gptm
{

struct SyntheticSpec
{
  int num_docs = 90;
  int vocab_size = 50;
  int num_topics = 3;
  int num_classes = 3;
  int words_per_doc = 50;
  /// Generating kernel: gamma within a class, c on the diagonal.
  double kernel_gamma = 1.0;
  double kernel_c = 1.1;
  /// Sigma_gen = topic_noise * I.
  double topic_noise = 0.5;
  /// Symmetric Dirichlet concentration of each topic's word distribution.
  double topic_concentration = 0.1;
};

struct SyntheticCorpus
{
  Corpus corpus;          ///< documents carry their class as label
  std::vector<int> classes;
  KernelMatrix kernel;    ///< generating kernel
  MatrixXd F;
  MatrixXd eta;
  MatrixXd beta;
  MatrixXd sigma;
};

/// Document d belongs to class d % num_classes.
inline SyntheticCorpus sample_synthetic(const SyntheticSpec & spec, std::uint64_t seed)
{
  Rng rng(seed);
  const int n = spec.num_docs;
  const int k = spec.num_topics;
  SyntheticCorpus s;
  std::vector<std::optional<int>> labels(n);
  s.classes.resize(n);
  for (int d = 0; d < n; ++d) {
    s.classes[d] = d % spec.num_classes;
    labels[d] = s.classes[d];
  }
  s.kernel = build_ml_kernel(labels_to_constraints(labels), n, spec.kernel_gamma, spec.kernel_c);

  const SpdFactor kchol = spd_factorize(s.kernel.values);
  s.F.resize(k, n);
  for (int i = 0; i < k; ++i) {
    VectorXd z(n);
    for (int d = 0; d < n; ++d) {
      z(d) = rng.normal();
    }
    s.F.row(i) = (kchol.lower() * z).transpose();
  }
  s.sigma = MatrixXd::Identity(k, k) * spec.topic_noise;
  const SpdFactor schol = spd_factorize(s.sigma);
  s.eta.resize(k, n);
  for (int d = 0; d < n; ++d) {
    VectorXd z(k);
    for (int i = 0; i < k; ++i) {
      z(i) = rng.normal();
    }
    s.eta.col(d) = s.F.col(d) + schol.lower() * z;
  }
  s.beta.resize(k, spec.vocab_size);
  for (int i = 0; i < k; ++i) {
    const auto row = rng.dirichlet(spec.vocab_size, spec.topic_concentration);
    for (int w = 0; w < spec.vocab_size; ++w) {
      s.beta(i, w) = row[w];
    }
  }

  s.corpus.vocab_size = spec.vocab_size;
  for (int w = 0; w < spec.vocab_size; ++w) {
    s.corpus.vocab.push_back("w" + std::to_string(w + 1));
  }
  s.corpus.docs.resize(n);
  std::vector<double> theta(k);
  std::vector<double> topic_row(spec.vocab_size);
  for (int d = 0; d < n; ++d) {
    const VectorXd th = softmax_theta(s.eta.col(d));
    for (int i = 0; i < k; ++i) {
      theta[i] = th(i);
    }
    std::map<int, int> counts;
    for (int t = 0; t < spec.words_per_doc; ++t) {
      const auto z = rng.categorical(theta);
      for (int w = 0; w < spec.vocab_size; ++w) {
        topic_row[w] = s.beta(z, w);
      }
      ++counts[static_cast<int>(rng.categorical(topic_row))];
    }
    for (const auto & [w, c] : counts) {
      s.corpus.docs[d].entries.push_back({w, c});
    }
    s.corpus.docs[d].label = s.classes[d];
  }
  return s;
}

}  // namespace gptm

#endif  // GPTM__SYNTHETIC_HPP_
