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

// The outer loop that alternates between learning a loss from the models seen
// so far and training a new model against it.

#pragma once

#include "lossforge/learnloss.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace lossforge {

enum class TuneMode { kOnline, kFullRun };

inline const char* to_string(TuneMode m) {
  return m == TuneMode::kOnline ? "online" : "full_run";
}

struct EpsilonPolicy {
  enum class Kind { kFixed, kHeuristic };
  Kind kind = Kind::kHeuristic;
  double value = 0.0;

  static EpsilonPolicy fixed(double v) {
    require(std::isfinite(v) && v >= 0.0, "EpsilonPolicy: epsilon must be >= 0");
    return {Kind::kFixed, v};
  }
  static EpsilonPolicy heuristic() { return {Kind::kHeuristic, 0.0}; }
};

struct TuneConfig {
  TuneMode mode = TuneMode::kFullRun;
  int max_iterations = 1;
  Hypercube feasible;
  EpsilonPolicy epsilon = EpsilonPolicy::heuristic();
  bool use_gradients = true;
  std::uint64_t seed = 0;
  double alpha_min = 1.0;
  std::vector<std::string> feature_names;  // defaults to f0, f1, ...
  numopt::QpSettings qp;

  void validate() const {
    require(max_iterations >= 1, "TuneConfig: max_iterations must be >= 1");
    require(feasible.dimension() >= 1, "TuneConfig: feasible set is empty");
    require(feature_names.empty() ||
                static_cast<Index>(feature_names.size()) == feasible.dimension(),
            "TuneConfig: one feature name per coordinate");
    require(alpha_min > 0.0, "TuneConfig: alpha_min must be > 0");
  }

  std::vector<std::string> names() const {
    if (!feature_names.empty()) return feature_names;
    std::vector<std::string> out;
    for (Index j = 0; j < feasible.dimension(); ++j) out.push_back("f" + std::to_string(j));
    return out;
  }
};

// What a trainer returns for one call. Setting `exhausted` ends the loop
// without recording the call.
template <class Model>
struct TrainerOutput {
  Model model;
  Observation observation;
  double train_loss = 0.0;
  bool exhausted = false;
};

struct TuneRecord {
  int iteration = 0;  // 1-based
  Vector lambda;
  double alpha = 0.0;
  double epsilon = 0.0;
  int argmin_index = 0;
  double ve = 0.0;
  double train_loss = 0.0;
  double best_ve = 0.0;  // running minimum over D_0 and records 1..iteration
  double wall_ms = 0.0;
};

template <class Model>
struct TuneTrace {
  std::vector<Observation> initial;
  std::vector<Observation> observations;  // D, growing by one per record
  std::vector<TuneRecord> records;
  std::vector<Model> models;              // trainer output per record
};

template <class Model>
class TuneAborted : public ComputationError {
 public:
  TuneAborted(const std::string& what, TuneTrace<Model> trace)
      : ComputationError(what), trace_(std::move(trace)) {}
  const TuneTrace<Model>& trace() const { return trace_; }

 private:
  TuneTrace<Model> trace_;
};

// epsilon for the current D under the configured policy.
inline double resolve_epsilon(const TuneConfig& config,
                              std::span<const Observation> observations) {
  if (!config.use_gradients) return 0.0;
  if (config.epsilon.kind == EpsilonPolicy::Kind::kFixed) return config.epsilon.value;
  return all_have_gradients(observations) ? default_epsilon(observations) : 0.0;
}

// `trainer(loss, warm_start)` returns TrainerOutput<Model>. In online mode it
// should run one epoch from the warm start; in full-run mode it may ignore it.
template <class Model, class Trainer>
TuneTrace<Model> tune_loss(std::vector<Observation> initial, Model warm_start,
                           Trainer&& trainer, const TuneConfig& config) {
  config.validate();
  require(!initial.empty(), "tune_loss: need at least one initial observation");
  const Index k = check_observations(initial, false);
  require(k == config.feasible.dimension(),
          "tune_loss: feasible set dimension must match feature count");
  const std::vector<std::string> names = config.names();

  TuneTrace<Model> trace;
  trace.initial = initial;
  trace.observations = std::move(initial);
  double best = kInfinity;
  for (const Observation& o : trace.observations) best = std::min(best, o.ve);

  Model current = std::move(warm_start);
  for (int i = 1; i <= config.max_iterations; ++i) {
    const auto started = std::chrono::steady_clock::now();
    TuneRecord rec;
    rec.iteration = i;
    TrainerOutput<Model> out;
    try {
      CostParams params;
      params.alpha_min = config.alpha_min;
      params.epsilon = resolve_epsilon(config, trace.observations);
      const LearnLossResult learned =
          learn_loss(trace.observations, config.feasible, params, config.qp);
      rec.lambda = learned.lambda;
      rec.alpha = learned.alpha;
      rec.epsilon = params.epsilon;
      rec.argmin_index = learned.argmin_index;
      out = trainer(LinearLoss(learned.lambda, names), static_cast<const Model&>(current));
      if (out.exhausted) break;
      require(out.observation.num_features() == k,
              "tune_loss: trainer returned a wrong-sized feature vector");
      out.observation.validate();
    } catch (const std::exception& e) {
      throw TuneAborted<Model>(
          "tune_loss aborted at iteration " + std::to_string(i) + ": " + e.what(),
          std::move(trace));
    }
    rec.ve = out.observation.ve;
    rec.train_loss = out.train_loss;
    best = std::min(best, rec.ve);
    rec.best_ve = best;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - started)
                      .count();
    trace.observations.push_back(std::move(out.observation));
    trace.records.push_back(std::move(rec));
    trace.models.push_back(out.model);
    current = std::move(out.model);
  }
  return trace;
}

// Smallest 1-based t >= 2 with curve[t] > curve[t-1]; the curve length if
// the curve never rises.
inline int overfit_start_epoch(const std::vector<double>& validation_curve) {
  require(!validation_curve.empty(), "overfit_start_epoch: empty curve");
  for (std::size_t t = 1; t < validation_curve.size(); ++t)
    if (validation_curve[t] > validation_curve[t - 1]) return static_cast<int>(t) + 1;
  return static_cast<int>(validation_curve.size());
}

template <class Model>
struct Bootstrap {
  std::vector<Observation> observations;  // one per epoch 1..t
  std::vector<Model> models;
  std::vector<double> validation_curve;
  int overfit_epoch = 0;  // t
};

// Runs `epoch(model)` (one unregularized epoch, returning TrainerOutput)
// until validation loss first rises or `max_epochs` is reached. Every
// per-epoch checkpoint is kept.
template <class Model, class EpochFn>
Bootstrap<Model> bootstrap_until_overfit(Model start, EpochFn&& epoch, int max_epochs) {
  require(max_epochs >= 1, "bootstrap_until_overfit: max_epochs must be >= 1");
  Bootstrap<Model> boot;
  Model current = std::move(start);
  for (int e = 1; e <= max_epochs; ++e) {
    TrainerOutput<Model> out = epoch(static_cast<const Model&>(current));
    boot.validation_curve.push_back(out.observation.ve);
    boot.observations.push_back(std::move(out.observation));
    boot.models.push_back(out.model);
    current = std::move(out.model);
    if (e >= 2 && boot.validation_curve[e - 1] > boot.validation_curve[e - 2]) break;
  }
  boot.overfit_epoch = overfit_start_epoch(boot.validation_curve);
  return boot;
}

// Trace serialization -------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Columns: iteration, ve, train_loss, lambda_0..lambda_{k-1}, wall_ms.
template <class Model>
void write_trace_csv(std::ostream& out, const TuneTrace<Model>& trace, Index k) {
  out << "iteration,ve,train_loss";
  for (Index j = 0; j < k; ++j) out << ",lambda_" << j;
  out << ",wall_ms\n";
  for (const TuneRecord& r : trace.records) {
    out << r.iteration << ',' << format_double(r.ve) << ',' << format_double(r.train_loss);
    for (Index j = 0; j < k; ++j) out << ',' << format_double(r.lambda(j));
    out << ',' << format_double(r.wall_ms) << '\n';
  }
}

inline nlohmann::json trace_sidecar(const TuneConfig& config, std::size_t initial_count) {
  nlohmann::json j;
  j["mode"] = to_string(config.mode);
  j["max_iterations"] = config.max_iterations;
  j["feasible_lo"] = detail::to_json_array(config.feasible.lo());
  j["feasible_hi"] = detail::to_json_array(config.feasible.hi());
  j["epsilon_policy"] =
      config.epsilon.kind == EpsilonPolicy::Kind::kFixed ? "fixed" : "heuristic";
  if (config.epsilon.kind == EpsilonPolicy::Kind::kFixed) j["epsilon"] = config.epsilon.value;
  j["use_gradients"] = config.use_gradients;
  j["seed"] = config.seed;
  j["alpha_min"] = config.alpha_min;
  j["feature_names"] = config.names();
  j["initial_observations"] = initial_count;
  return j;
}

}  // namespace lossforge
