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
/// \brief Checkpoint directories: model matrices as CSV plus meta.json.
///
/// Layout: beta.csv (K x V), sigma.csv (K x K), F.csv (K x D),
/// lambda.csv (D x K), nu2.csv (D x K), elbo_trace.csv (iteration,elbo)
/// and meta.json. The thread count is deliberately not recorded.

#ifndef GPTM__CHECKPOINT_HPP_
#define GPTM__CHECKPOINT_HPP_

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "gptm/csv.hpp"
#include "gptm/error.hpp"
#include "gptm/kernel.hpp"
#include "gptm/model.hpp"
#include "gptm/pipeline.hpp"
#include "gptm/vi_train.hpp"

namespace gptm
{

inline KernelKind parse_kernel_kind(const std::string & s)
{
  if (s == "nn") {return KernelKind::nn;}
  if (s == "ml") {return KernelKind::ml;}
  if (s == "identity") {return KernelKind::identity;}
  if (s == "external") {return KernelKind::external;}
  throw ValidationError("unknown kernel kind '" + s + "'");
}

struct Checkpoint
{
  ModelParams model;
  MatrixXd lambda;  ///< D x K
  MatrixXd nu2;     ///< D x K
  KernelSpec kernel;
  TrainConfig config;
  double final_elbo = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail
{

inline nlohmann::ordered_json config_to_json(const TrainConfig & c)
{
  nlohmann::ordered_json j;
  j["num_topics"] = c.num_topics;
  j["max_em_iters"] = c.max_em_iters;
  j["em_rel_tol"] = c.em_rel_tol;
  j["estep_max_iters"] = c.estep_max_iters;
  j["estep_rel_tol"] = c.estep_grad_tol;
  j["max_halvings"] = c.max_halvings;
  j["sigma_jitter"] = c.sigma_jitter;
  return j;
}

inline nlohmann::ordered_json kernel_to_json(const KernelSpec & s, const KernelMatrix & built)
{
  nlohmann::ordered_json j;
  j["kind"] = to_string(s.kind);
  j["k"] = s.k;
  j["gamma"] = s.gamma;
  j["sigma2"] = s.sigma2;
  if (s.c) {
    j["c"] = *s.c;
  } else {
    j["c"] = nullptr;
  }
  j["c_used"] = built.c;
  j["jitter"] = built.jitter;
  j["constraints"] = s.constraints_path;
  j["external"] = s.external_path;
  return j;
}

inline void write_text(const std::filesystem::path & path, const std::string & text)
{
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw Error("write failed: " + path.string());
  }
}

}  // namespace detail

/// Writes the checkpoint, creating `dir` if needed.
inline void save_checkpoint(
  const std::string & dir, const TrainResult & result, const TrainConfig & config,
  const KernelSpec & kernel_spec, const KernelMatrix & kernel)
{
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) {
    throw Error("cannot create " + dir + ": " + ec.message());
  }
  const ModelParams & m = result.model;
  write_matrix_csv((root / "beta.csv").string(), m.beta);
  write_matrix_csv((root / "sigma.csv").string(), m.sigma);
  write_matrix_csv((root / "F.csv").string(), m.F);
  write_matrix_csv((root / "lambda.csv").string(), result.state.lambda_matrix().transpose());
  write_matrix_csv((root / "nu2.csv").string(), result.state.nu2_matrix().transpose());

  std::string trace;
  for (std::size_t i = 0; i < result.elbo_trace.size(); ++i) {
    trace += std::to_string(i + 1) + "," + format_double(result.elbo_trace[i]) + "\n";
  }
  detail::write_text(root / "elbo_trace.csv", trace);

  nlohmann::ordered_json meta;
  meta["K"] = m.num_topics;
  meta["V"] = m.vocab_size();
  meta["D"] = m.num_docs();
  meta["variant"] = to_string(m.variant);
  meta["sigma_fixed"] = sigma_is_fixed(m.variant);
  meta["kernel_fixed_identity"] = kernel_is_identity(m.variant);
  meta["seed"] = config.seed;
  meta["final_elbo"] = result.elbo_trace.empty() ? 0.0 : result.elbo_trace.back();
  meta["iterations"] = result.iterations;
  meta["converged"] = result.converged;
  meta["config"] = detail::config_to_json(config);
  meta["kernel"] = detail::kernel_to_json(kernel_spec, kernel);
  detail::write_text(root / "meta.json", meta.dump(2) + "\n");
}

/// Reads a checkpoint written by save_checkpoint. Missing or inconsistent
/// files raise LoadError.
inline Checkpoint load_checkpoint(const std::string & dir)
{
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) {
    throw LoadError(dir + ": checkpoint directory not found");
  }
  Checkpoint cp;
  nlohmann::json meta;
  {
    std::ifstream in(root / "meta.json", std::ios::binary);
    if (!in) {
      throw LoadError((root / "meta.json").string() + ": cannot open");
    }
    try {
      meta = nlohmann::json::parse(in);
      cp.model.num_topics = meta.at("K").get<int>();
      cp.model.variant = parse_variant(meta.at("variant").get<std::string>());
      cp.final_elbo = meta.at("final_elbo").get<double>();
      cp.iterations = meta.at("iterations").get<int>();
      cp.converged = meta.at("converged").get<bool>();
      cp.config.seed = meta.at("seed").get<std::uint64_t>();
      cp.config.variant = cp.model.variant;
      cp.config.num_topics = cp.model.num_topics;
      const auto & c = meta.at("config");
      cp.config.max_em_iters = c.at("max_em_iters").get<int>();
      cp.config.em_rel_tol = c.at("em_rel_tol").get<double>();
      cp.config.estep_max_iters = c.at("estep_max_iters").get<int>();
      cp.config.estep_grad_tol = c.at("estep_rel_tol").get<double>();
      cp.config.max_halvings = c.at("max_halvings").get<int>();
      cp.config.sigma_jitter = c.at("sigma_jitter").get<bool>();
      const auto & k = meta.at("kernel");
      cp.kernel.kind = parse_kernel_kind(k.at("kind").get<std::string>());
      cp.kernel.k = k.at("k").get<int>();
      cp.kernel.gamma = k.at("gamma").get<double>();
      cp.kernel.sigma2 = k.at("sigma2").get<double>();
      if (!k.at("c").is_null()) {
        cp.kernel.c = k.at("c").get<double>();
      }
      cp.kernel.constraints_path = k.at("constraints").get<std::string>();
      cp.kernel.external_path = k.at("external").get<std::string>();
    } catch (const nlohmann::json::exception & e) {
      throw LoadError((root / "meta.json").string() + ": " + e.what());
    }
  }
  cp.model.beta = read_matrix_csv((root / "beta.csv").string());
  cp.model.sigma = read_matrix_csv((root / "sigma.csv").string());
  cp.model.F = read_matrix_csv((root / "F.csv").string());
  cp.lambda = read_matrix_csv((root / "lambda.csv").string());
  cp.nu2 = read_matrix_csv((root / "nu2.csv").string());

  const Index kk = cp.model.num_topics;
  const Index d = meta.at("D").get<Index>();
  const Index v = meta.at("V").get<Index>();
  auto expect = [&](const MatrixXd & mat, Index r, Index c, const char * name) {
      if (mat.rows() != r || mat.cols() != c) {
        throw LoadError(
                (root / name).string() + ": expected " + std::to_string(r) + "x" +
                std::to_string(c) + ", got " + std::to_string(mat.rows()) + "x" +
                std::to_string(mat.cols()));
      }
    };
  expect(cp.model.beta, kk, v, "beta.csv");
  expect(cp.model.sigma, kk, kk, "sigma.csv");
  expect(cp.model.F, kk, d, "F.csv");
  expect(cp.lambda, d, kk, "lambda.csv");
  expect(cp.nu2, d, kk, "nu2.csv");
  return cp;
}

}  // namespace gptm

#endif  // GPTM__CHECKPOINT_HPP_
