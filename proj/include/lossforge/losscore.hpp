// Copyright 2026 The LossForge Authors
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

// Problem-formulation types shared by every module: observations of trained
// models, the feasible box for loss weights, linear losses, and the
// loss-matching cost.

#pragma once

#include "lossforge/common.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace lossforge {

// One trained model's record. `jacobian` is n x k with column j the gradient
// of feature j at the model; `grad_ve` is the validation-error gradient.
struct Observation {
  double ve = 0.0;
  Vector fv;
  std::optional<Vector> grad_ve;
  std::optional<Matrix> jacobian;
  std::string model_id;

  Index num_features() const { return fv.size(); }
  bool has_gradients() const { return grad_ve.has_value(); }

  void validate() const {
    require(std::isfinite(ve) && ve >= 0.0,
            "Observation: ve must be finite and non-negative");
    require(fv.allFinite(), "Observation: fv must be finite");
    require(grad_ve.has_value() == jacobian.has_value(),
            "Observation: grad_ve and jacobian must be both present or both absent");
    if (grad_ve) {
      require(jacobian->rows() == grad_ve->size(),
              "Observation: jacobian rows must match grad_ve length");
      require(jacobian->cols() == fv.size(),
              "Observation: jacobian columns must match fv length");
      require(grad_ve->allFinite() && jacobian->allFinite(),
              "Observation: gradients must be finite");
    }
  }
};

// Per-coordinate box; lo_j == hi_j pins coordinate j.
class Hypercube {
 public:
  Hypercube() = default;
  Hypercube(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    require(lo_.size() == hi_.size(), "Hypercube: lo/hi length mismatch");
    require(lo_.allFinite() && hi_.allFinite(), "Hypercube: bounds must be finite");
    for (Index j = 0; j < lo_.size(); ++j)
      require(lo_(j) <= hi_(j), "Hypercube: lo must not exceed hi");
  }

  static Hypercube unit(Index k) {
    return Hypercube(Vector::Zero(k), Vector::Ones(k));
  }

  Index dimension() const { return lo_.size(); }
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }
  bool pinned(Index j) const { return lo_(j) == hi_(j); }

  bool contains(const Vector& lambda, double tol = 0.0) const {
    if (lambda.size() != lo_.size()) return false;
    for (Index j = 0; j < lo_.size(); ++j)
      if (lambda(j) < lo_(j) - tol || lambda(j) > hi_(j) + tol) return false;
    return true;
  }

  Vector clamp(const Vector& lambda) const {
    return lambda.cwiseMax(lo_).cwiseMin(hi_);
  }

 private:
  Vector lo_;
  Vector hi_;
};

class LinearLoss {
 public:
  LinearLoss(Vector lambda, std::vector<std::string> feature_names)
      : lambda_(std::move(lambda)), names_(std::move(feature_names)) {
    require(lambda_.allFinite(), "LinearLoss: lambda must be finite");
    require(static_cast<Index>(names_.size()) == lambda_.size(),
            "LinearLoss: one feature name per coefficient");
  }

  const Vector& lambda() const { return lambda_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  Index dimension() const { return lambda_.size(); }

 private:
  Vector lambda_;
  std::vector<std::string> names_;
};

struct CostParams {
  double epsilon = 0.0;
  double alpha_min = 1e-6;

  void validate() const {
    require(std::isfinite(epsilon) && epsilon >= 0.0,
            "CostParams: epsilon must be >= 0");
    require(std::isfinite(alpha_min) && alpha_min > 0.0,
            "CostParams: alpha_min must be > 0");
  }
};

inline double evaluate_loss(const LinearLoss& loss, const Vector& fv) {
  require(fv.size() == loss.dimension(), "evaluate_loss: dimension mismatch");
  return loss.lambda().dot(fv);
}

// Checks shared dimensions; returns k. When `need_gradients`, every
// observation must carry gradients of a common length n.
inline Index check_observations(std::span<const Observation> observations,
                                bool need_gradients) {
  require(!observations.empty(), "at least one observation is required");
  const Index k = observations.front().num_features();
  const Index n = observations.front().has_gradients()
                      ? observations.front().grad_ve->size()
                      : -1;
  for (const Observation& obs : observations) {
    obs.validate();
    require(obs.num_features() == k, "observations disagree on feature count");
    if (need_gradients) {
      require(obs.has_gradients(),
              "gradient term requires gradients on every observation");
      require(obs.grad_ve->size() == n,
              "observations disagree on model dimension");
    }
  }
  return k;
}

inline bool all_have_gradients(std::span<const Observation> observations) {
  for (const Observation& obs : observations)
    if (!obs.has_gradients()) return false;
  return true;
}

// sum_i (lambda.fv_i - alpha ve_i)^2 + epsilon sum_i |J_i lambda - alpha g_i|^2
inline double cost(const Vector& lambda, double alpha,
                   std::span<const Observation> observations,
                   const CostParams& params) {
  params.validate();
  require(alpha > 0.0, "cost: alpha must be > 0");
  const bool gradient_term = params.epsilon > 0.0;
  const Index k = check_observations(observations, gradient_term);
  require(lambda.size() == k, "cost: lambda dimension mismatch");
  double total = 0.0;
  for (const Observation& obs : observations) {
    const double r = lambda.dot(obs.fv) - alpha * obs.ve;
    total += r * r;
    if (gradient_term)
      total += params.epsilon *
               (*obs.jacobian * lambda - alpha * *obs.grad_ve).squaredNorm();
  }
  return total;
}

// JSON-lines interchange ------------------------------------------------------

namespace detail {

inline nlohmann::json to_json_array(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const nlohmann::json& j, const char* what) {
  require(j.is_array(), std::string(what) + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), std::string(what) + " entries must be numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const Observation& obs) {
  nlohmann::json j;
  j["ve"] = obs.ve;
  j["fv"] = detail::to_json_array(obs.fv);
  if (obs.grad_ve) {
    j["grad_ve"] = detail::to_json_array(*obs.grad_ve);
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < obs.jacobian->rows(); ++r)
      rows.push_back(detail::to_json_array(obs.jacobian->row(r).transpose()));
    j["jacobian"] = std::move(rows);
  }
  j["model_id"] = obs.model_id;
  return j;
}

inline Observation observation_from_json(const nlohmann::json& j) {
  require(j.is_object(), "observation record must be a JSON object");
  require(j.contains("ve") && j["ve"].is_number(), "observation: missing numeric 've'");
  require(j.contains("fv"), "observation: missing 'fv'");
  Observation obs;
  obs.ve = j["ve"].get<double>();
  obs.fv = detail::vector_from_json(j["fv"], "fv");
  if (j.contains("grad_ve")) obs.grad_ve = detail::vector_from_json(j["grad_ve"], "grad_ve");
  if (j.contains("jacobian")) {
    const auto& rows = j["jacobian"];
    require(rows.is_array(), "jacobian must be an array of rows");
    Matrix jac(static_cast<Index>(rows.size()), obs.fv.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Vector row = detail::vector_from_json(rows[r], "jacobian row");
      require(row.size() == obs.fv.size(), "jacobian row length must equal fv length");
      jac.row(static_cast<Index>(r)) = row.transpose();
    }
    obs.jacobian = std::move(jac);
  }
  if (j.contains("model_id")) {
    require(j["model_id"].is_string(), "model_id must be a string");
    obs.model_id = j["model_id"].get<std::string>();
  }
  obs.validate();
  return obs;
}

inline void write_observations(std::ostream& out,
                               std::span<const Observation> observations) {
  for (const Observation& obs : observations) out << to_json(obs).dump() << '\n';
}

inline std::vector<Observation> read_observations(std::istream& in) {
  std::vector<Observation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(observation_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("observations line " + std::to_string(line_no) +
                            ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("observations line " + std::to_string(line_no) +
                            ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Observation> read_observations_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open observations file: " + path);
  return read_observations(in);
}

}  // namespace lossforge
