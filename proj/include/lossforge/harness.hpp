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

// Experiment runner: scenario configs, synthetic data, baselines and the CSV
// report layout.

#pragma once

#include "lossforge/features.hpp"
#include "lossforge/trainer.hpp"
#include "lossforge/tuneloss.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace lossforge::harness {

// Synthetic data ----------------------------------------------------------------

struct SyntheticSpec {
  Index num_examples = 400;
  Index dim = 20;
  int classes = 3;
  double separation = 1.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_examples >= 4, "synthetic: num_examples must be >= 4");
    require(dim >= 1, "synthetic: dim must be >= 1");
    require(classes >= 2, "synthetic: classes must be >= 2");
    require(std::isfinite(separation) && separation >= 0.0, "synthetic: separation must be >= 0");
    require(label_noise >= 0.0 && label_noise <= 1.0, "synthetic: label_noise must be in [0, 1]");
  }
};

// Class means with independent N(0, 1/d) coordinates, scaled so their
// expected norm is `separation`.
inline Matrix class_means(const SyntheticSpec& spec, std::uint64_t stream) {
  std::mt19937_64 rng(mix_seed(spec.seed, stream));
  std::normal_distribution<double> normal;
  Matrix means(spec.classes, spec.dim);
  const double s = spec.separation / std::sqrt(static_cast<double>(spec.dim));
  for (Index c = 0; c < means.rows(); ++c)
    for (Index j = 0; j < means.cols(); ++j) means(c, j) = s * normal(rng);
  return means;
}

// Labels cycle through the classes; x = mean[y] + N(0, I). With probability
// `label_noise` the label is then replaced by a uniform draw.
inline Dataset sample_gaussian_classes(const Matrix& means, Index n, double label_noise,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset data;
  data.classes = static_cast<int>(means.rows());
  data.x.resize(n, means.cols());
  data.y.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int label = static_cast<int>(i % data.classes);
    for (Index j = 0; j < means.cols(); ++j) data.x(i, j) = means(label, j) + normal(rng);
    if (uniform01(rng) < label_noise)
      label = std::min(data.classes - 1, static_cast<int>(uniform01(rng) * data.classes));
    data.y[static_cast<std::size_t>(i)] = label;
  }
  return data;
}

inline Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  return sample_gaussian_classes(class_means(spec, 0), spec.num_examples, spec.label_noise,
                                 mix_seed(spec.seed, 1));
}

struct Splits {
  Dataset train, validation, test;
  std::vector<Index> train_rows, validation_rows, test_rows;
};

// 50/25/25 over a seeded permutation: validation and test get floor(n/4)
// rows each and train the remainder.
inline Splits split_dataset(const Dataset& data, std::uint64_t seed) {
  data.validate();
  const Index n = data.size();
  const Index quarter = n / 4;
  require(quarter >= 1, "split_dataset: need at least 4 examples");
  std::mt19937_64 rng(mix_seed(seed, 2));
  const std::vector<Index> order = shuffled_indices(n, rng);
  Splits s;
  s.validation_rows.assign(order.begin(), order.begin() + quarter);
  s.test_rows.assign(order.begin() + quarter, order.begin() + 2 * quarter);
  s.train_rows.assign(order.begin() + 2 * quarter, order.end());
  for (auto* rows : {&s.train_rows, &s.validation_rows, &s.test_rows})
    std::sort(rows->begin(), rows->end());
  s.train = data.subset(s.train_rows, Split::kTrain);
  s.validation = data.subset(s.validation_rows, Split::kValidation);
  s.test = data.subset(s.test_rows, Split::kTest);
  return s;
}

// Scenario configuration -----------------------------------------------------------

enum class Scenario { kHyperparamTuning, kOnlineRegularizer, kMixtureLoss, kPerfectLinearRecovery };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::kHyperparamTuning: return "HyperparamTuning";
    case Scenario::kOnlineRegularizer: return "OnlineRegularizer";
    case Scenario::kMixtureLoss: return "MixtureLoss";
    case Scenario::kPerfectLinearRecovery: return "PerfectLinearRecovery";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  for (Scenario v : {Scenario::kHyperparamTuning, Scenario::kOnlineRegularizer,
                     Scenario::kMixtureLoss, Scenario::kPerfectLinearRecovery})
    if (s == to_string(v)) return v;
  throw InvalidArgument("config: unknown scenario '" + s + "'");
}

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct DatasetSource {
  SyntheticSpec synthetic;
  std::string csv_path;  // when set, replaces the synthetic spec
  int classes = 0;       // CSV only; 0 infers from labels
  bool standardize = true;
  bool vary_with_seed = false;  // synthetic only: data seed mixed with the run seed
};

struct TrainerOverrides {
  int epochs = 10;
  AdagradSettings adagrad;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::kHyperparamTuning;
  DatasetSource dataset;
  std::string feature_set = "standard";
  std::map<std::string, Range> feasible;  // per feature name; unnamed ones use defaults
  int budget = 3;
  int baseline_budget = 0;  // 0 means `budget`
  std::vector<std::uint64_t> seeds{0};
  TrainerOverrides trainer;
  EpsilonPolicy epsilon = EpsilonPolicy::heuristic();
  bool use_gradients = true;
  double alpha_min = 1.0;
  bool per_example_scaling = true;  // divide l1, l2sq, pwl ranges by the train size
  int breakpoints = 50;
  int components = 3;       // MixtureLoss
  int grid_points = 11;     // MixtureLoss simplex oracle, per axis
  int recovery_features = 3;  // PerfectLinearRecovery
  int recovery_params = 6;

  int effective_baseline_budget() const { return baseline_budget > 0 ? baseline_budget : budget; }

  void validate() const {
    require(budget >= 1, "config: budget must be >= 1");
    require(baseline_budget >= 0, "config: baseline_budget must be >= 0");
    require(!seeds.empty(), "config: need at least one seed");
    require(trainer.epochs >= 1, "config: trainer.epochs must be >= 1");
    trainer.adagrad.validate();
    require(alpha_min > 0.0, "config: alpha_min must be > 0");
    for (const auto& [name, r] : feasible)
      require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi,
              "config: invalid range for '" + name + "'");
    require(breakpoints >= 2, "config: breakpoints must be >= 2");
    require(components >= 2, "config: components must be >= 2");
    require(grid_points >= 2, "config: grid_points must be >= 2");
    require(recovery_features >= 2 && recovery_params >= 1,
            "config: recovery sizes must be >= 2 features and >= 1 parameter");
    if (dataset.csv_path.empty()) dataset.synthetic.validate();
  }
};

// Default boxes for the standard features, in per-dataset-sum units for l1
// and l2sq.
inline Range default_range(const std::string& feature) {
  if (feature == "l1" || feature == "l2sq") return {0.1, 100.0};
  if (feature == "uniform") return {0.0, 0.1};
  if (feature == "dropout") return {0.0, 1.0};
  if (feature == "logloss") return {1.0, 1.0};
  if (feature.rfind("pwl_", 0) == 0) return {0.0, 1.0};
  if (feature.rfind("component_", 0) == 0) return {0.0, 1.0};
  throw InvalidArgument("config: no default range for feature '" + feature + "'");
}

inline bool scaled_by_train_size(const std::string& feature) {
  return feature == "l1" || feature == "l2sq" || feature.rfind("pwl_", 0) == 0;
}

// A "pwl" key sets every hinge coordinate at once.
inline Hypercube feasible_box(const ScenarioConfig& config, const std::vector<std::string>& names,
                              Index train_size) {
  Vector lo(static_cast<Index>(names.size())), hi(lo.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    const std::string& name = names[j];
    Range r = default_range(name);
    if (auto it = config.feasible.find(name); it != config.feasible.end()) r = it->second;
    else if (auto pw = config.feasible.find("pwl");
             pw != config.feasible.end() && name.rfind("pwl_", 0) == 0)
      r = pw->second;
    if (config.per_example_scaling && scaled_by_train_size(name)) {
      r.lo /= static_cast<double>(train_size);
      r.hi /= static_cast<double>(train_size);
    }
    lo(static_cast<Index>(j)) = r.lo;
    hi(static_cast<Index>(j)) = r.hi;
  }
  return Hypercube(lo, hi);
}

namespace detail {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    require(ok, "config: unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

inline ScenarioConfig parse_config(const nlohmann::json& j) {
  using detail::get_or;
  require(j.is_object(), "config: top level must be an object");
  detail::reject_unknown(j,
                         {"scenario", "dataset", "feature_set", "feasible", "budget",
                          "baseline_budget", "seeds", "trainer", "tuneloss", "breakpoints",
                          "components", "grid_points", "recovery", "per_example_scaling"},
                         "config");
  require(j.contains("scenario"), "config: missing 'scenario'");
  ScenarioConfig c;
  c.scenario = scenario_from_string(get_or<std::string>(j, "scenario", ""));
  switch (c.scenario) {
    case Scenario::kOnlineRegularizer: c.feature_set = "pwl"; break;
    case Scenario::kMixtureLoss: c.feature_set = "mixture"; break;
    case Scenario::kPerfectLinearRecovery: c.feature_set = "linear"; break;
    default: break;
  }
  c.feature_set = get_or(j, "feature_set", c.feature_set);
  c.budget = get_or(j, "budget", c.budget);
  c.baseline_budget = get_or(j, "baseline_budget", c.baseline_budget);
  c.breakpoints = get_or(j, "breakpoints", c.breakpoints);
  c.components = get_or(j, "components", c.components);
  c.grid_points = get_or(j, "grid_points", c.grid_points);
  c.per_example_scaling = get_or(j, "per_example_scaling", c.per_example_scaling);

  if (j.contains("dataset")) {
    const nlohmann::json& d = j["dataset"];
    require(d.is_object(), "config: 'dataset' must be an object");
    detail::reject_unknown(d, {"synthetic", "csv", "classes", "standardize", "vary_with_seed"},
                           "dataset");
    c.dataset.csv_path = get_or<std::string>(d, "csv", "");
    c.dataset.classes = get_or(d, "classes", 0);
    c.dataset.standardize = get_or(d, "standardize", true);
    c.dataset.vary_with_seed = get_or(d, "vary_with_seed", false);
    if (d.contains("synthetic")) {
      const nlohmann::json& s = d["synthetic"];
      detail::reject_unknown(
          s, {"num_examples", "dim", "classes", "separation", "label_noise", "seed"},
          "dataset.synthetic");
      SyntheticSpec& spec = c.dataset.synthetic;
      spec.num_examples = get_or<Index>(s, "num_examples", spec.num_examples);
      spec.dim = get_or<Index>(s, "dim", spec.dim);
      spec.classes = get_or(s, "classes", spec.classes);
      spec.separation = get_or(s, "separation", spec.separation);
      spec.label_noise = get_or(s, "label_noise", spec.label_noise);
      spec.seed = get_or<std::uint64_t>(s, "seed", spec.seed);
    }
  }
  if (j.contains("feasible")) {
    require(j["feasible"].is_object(), "config: 'feasible' must map names to [lo, hi]");
    for (auto it = j["feasible"].begin(); it != j["feasible"].end(); ++it) {
      const nlohmann::json& r = it.value();
      require(r.is_array() && r.size() == 2 && r[0].is_number() && r[1].is_number(),
              "config: range for '" + it.key() + "' must be [lo, hi]");
      c.feasible[it.key()] = {r[0].get<double>(), r[1].get<double>()};
    }
  }
  if (j.contains("seeds")) {
    const nlohmann::json& s = j["seeds"];
    c.seeds.clear();
    if (s.is_array()) {
      for (const auto& v : s) {
        require(v.is_number_unsigned(), "config: seeds must be non-negative integers");
        c.seeds.push_back(v.get<std::uint64_t>());
      }
    } else if (s.is_object()) {
      detail::reject_unknown(s, {"count", "first"}, "seeds");
      const int count = get_or(s, "count", 1);
      const auto first = get_or<std::uint64_t>(s, "first", 0);
      require(count >= 1, "config: seeds.count must be >= 1");
      for (int i = 0; i < count; ++i) c.seeds.push_back(first + static_cast<std::uint64_t>(i));
    } else {
      throw InvalidArgument("config: 'seeds' must be a list or {count, first}");
    }
  }
  if (j.contains("trainer")) {
    const nlohmann::json& t = j["trainer"];
    detail::reject_unknown(t, {"epochs", "base_learning_rate", "learning_rate_multiplier", "delta"},
                           "trainer");
    c.trainer.epochs = get_or(t, "epochs", c.trainer.epochs);
    c.trainer.adagrad.base_learning_rate =
        get_or(t, "base_learning_rate", c.trainer.adagrad.base_learning_rate);
    c.trainer.adagrad.learning_rate_multiplier =
        get_or(t, "learning_rate_multiplier", c.trainer.adagrad.learning_rate_multiplier);
    c.trainer.adagrad.delta = get_or(t, "delta", c.trainer.adagrad.delta);
  }
  if (j.contains("tuneloss")) {
    const nlohmann::json& t = j["tuneloss"];
    detail::reject_unknown(t, {"epsilon", "use_gradients", "alpha_min"}, "tuneloss");
    if (t.contains("epsilon")) {
      const nlohmann::json& e = t["epsilon"];
      if (e.is_string()) {
        require(e.get<std::string>() == "auto", "config: epsilon must be 'auto' or a number");
        c.epsilon = EpsilonPolicy::heuristic();
      } else {
        require(e.is_number(), "config: epsilon must be 'auto' or a number");
        c.epsilon = EpsilonPolicy::fixed(e.get<double>());
      }
    }
    c.use_gradients = get_or(t, "use_gradients", c.use_gradients);
    c.alpha_min = get_or(t, "alpha_min", c.alpha_min);
  }
  if (j.contains("recovery")) {
    const nlohmann::json& r = j["recovery"];
    detail::reject_unknown(r, {"features", "params"}, "recovery");
    c.recovery_features = get_or(r, "features", c.recovery_features);
    c.recovery_params = get_or(r, "params", c.recovery_params);
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config: " + path + ": " + e.what());
  }
  return parse_config(j);
}

// Normalized config with defaults filled in.
inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["scenario"] = to_string(c.scenario);
  nlohmann::json d;
  if (!c.dataset.csv_path.empty()) {
    d["csv"] = c.dataset.csv_path;
    d["classes"] = c.dataset.classes;
    d["standardize"] = c.dataset.standardize;
  } else {
    const SyntheticSpec& s = c.dataset.synthetic;
    d["synthetic"] = {{"num_examples", s.num_examples}, {"dim", s.dim},
                      {"classes", s.classes},           {"separation", s.separation},
                      {"label_noise", s.label_noise},   {"seed", s.seed}};
    d["vary_with_seed"] = c.dataset.vary_with_seed;
  }
  j["dataset"] = d;
  j["feature_set"] = c.feature_set;
  nlohmann::json f = nlohmann::json::object();
  for (const auto& [name, r] : c.feasible) f[name] = {r.lo, r.hi};
  j["feasible"] = f;
  j["per_example_scaling"] = c.per_example_scaling;
  j["budget"] = c.budget;
  j["baseline_budget"] = c.effective_baseline_budget();
  j["seeds"] = c.seeds;
  j["trainer"] = {{"epochs", c.trainer.epochs},
                  {"base_learning_rate", c.trainer.adagrad.base_learning_rate},
                  {"learning_rate_multiplier", c.trainer.adagrad.learning_rate_multiplier},
                  {"delta", c.trainer.adagrad.delta}};
  nlohmann::json t;
  if (c.epsilon.kind == EpsilonPolicy::Kind::kFixed) t["epsilon"] = c.epsilon.value;
  else t["epsilon"] = "auto";
  t["use_gradients"] = c.use_gradients;
  t["alpha_min"] = c.alpha_min;
  j["tuneloss"] = t;
  j["breakpoints"] = c.breakpoints;
  j["components"] = c.components;
  j["grid_points"] = c.grid_points;
  j["recovery"] = {{"features", c.recovery_features}, {"params", c.recovery_params}};
  return j;
}

// Report --------------------------------------------------------------------------

struct CurvePoint {
  std::string algorithm;
  std::uint64_t seed = 0;
  int step = 0;
  double val_metric = 0.0;
  double test_metric = 0.0;
  double best_so_far_val = 0.0;
  double best_so_far_test = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct RegularizerSample {
  std::uint64_t seed = 0;
  int epoch = 0;
  double x = 0.0;
  double r = 0.0;
};

struct SeedError {
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string message;
};

struct RunReport {
  std::string scenario;
  nlohmann::json config;
  std::vector<CurvePoint> curves;
  std::vector<RegularizerSample> regularizer;
  std::vector<SeedError> errors;
  nlohmann::json details = nlohmann::json::object();  // scenario-specific extras

  std::vector<CurvePoint> curve(const std::string& algorithm, std::uint64_t seed) const {
    std::vector<CurvePoint> out;
    for (const CurvePoint& p : curves)
      if (p.algorithm == algorithm && p.seed == seed) out.push_back(p);
    return out;
  }
};

// Appends (val, test) pairs as steps 1..n. The test column of best-so-far
// follows the model with the lowest validation metric so far, the first one
// on ties. `prior` seeds the running best with an earlier model.
struct BestSoFar {
  double val = kInfinity;
  double test = kInfinity;

  void offer(double v, double t) {
    if (v < val) {
      val = v;
      test = t;
    }
  }
};

inline std::vector<CurvePoint> make_curve(const std::string& algorithm, std::uint64_t seed,
                                          const std::vector<std::pair<double, double>>& metrics,
                                          BestSoFar best = {}) {
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    best.offer(metrics[i].first, metrics[i].second);
    out.push_back({algorithm, seed, static_cast<int>(i) + 1, metrics[i].first,
                   metrics[i].second, best.val, best.test});
  }
  return out;
}

// Threading -----------------------------------------------------------------------

// LOSSFORGE_THREADS if set to a positive integer, else the hardware count.
inline int thread_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LOSSFORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<int>(v);
  }
  return std::max(n, 1);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written by index; the first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Scenario plumbing ---------------------------------------------------------------

struct ScenarioData {
  std::shared_ptr<const Dataset> train;
  Dataset validation, test;
};

inline ScenarioData load_data(const ScenarioConfig& config, std::uint64_t run_seed) {
  Dataset all;
  std::uint64_t split_seed = 0;
  if (!config.dataset.csv_path.empty()) {
    try {
      all = read_csv_dataset_file(config.dataset.csv_path, config.dataset.classes);
    } catch (const InvalidArgument& e) {
      throw ComputationError(std::string("dataset load failed: ") + e.what());
    }
  } else {
    SyntheticSpec spec = config.dataset.synthetic;
    if (config.dataset.vary_with_seed) spec.seed = mix_seed(spec.seed, run_seed);
    all = make_synthetic(spec);
    split_seed = spec.seed;
  }
  Splits s = split_dataset(all, split_seed);
  if (config.dataset.standardize || config.dataset.csv_path.empty()) {
    const Standardizer z = Standardizer::fit(s.train.x);
    z.apply(s.train);
    z.apply(s.validation);
    z.apply(s.test);
  }
  return {std::make_shared<const Dataset>(std::move(s.train)), std::move(s.validation),
          std::move(s.test)};
}

inline FeatureSet build_features(const std::string& name, std::shared_ptr<const Dataset> train,
                                 std::uint64_t seed) {
  if (name == "standard") {
    DropoutOptions dropout;
    dropout.seed = seed;
    return standard_regularizer_features(std::move(train), dropout);
  }
  if (name == "l2") {
    const Index n = train->num_params();
    std::vector<std::shared_ptr<const FeatureBlock>> blocks{
        std::make_shared<L2SquaredBlock>(), std::make_shared<LogLossBlock>(std::move(train))};
    return FeatureSet(std::move(blocks), n, 1);
  }
  if (name == "l1l2") {
    const Index n = train->num_params();
    std::vector<std::shared_ptr<const FeatureBlock>> blocks{
        std::make_shared<L1Block>(), std::make_shared<L2SquaredBlock>(),
        std::make_shared<LogLossBlock>(std::move(train))};
    return FeatureSet(std::move(blocks), n, 2);
  }
  throw InvalidArgument("config: unknown feature_set '" + name + "' for this scenario");
}

// Per-coordinate sampling: log-uniform when hi / lo >= 100 with lo > 0,
// uniform otherwise; pinned coordinates are constant.
inline bool log_uniform_coordinate(double lo, double hi) { return lo > 0.0 && hi >= 100.0 * lo; }

template <class Engine>
Vector sample_lambda(const Hypercube& box, Engine& engine) {
  Vector out(box.dimension());
  for (Index j = 0; j < box.dimension(); ++j) {
    const double lo = box.lo()(j), hi = box.hi()(j);
    const double u = uniform01(engine);
    if (lo == hi) out(j) = lo;
    else if (log_uniform_coordinate(lo, hi))
      out(j) = std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
    else out(j) = lo + u * (hi - lo);
  }
  return out;
}

inline nlohmann::json sampling_json(const Hypercube& box, const std::vector<std::string>& names) {
  nlohmann::json j = nlohmann::json::object();
  for (Index k = 0; k < box.dimension(); ++k) {
    const double lo = box.lo()(k), hi = box.hi()(k);
    j[names[static_cast<std::size_t>(k)]] = {
        {"lo", lo},
        {"hi", hi},
        {"distribution", lo == hi ? "pinned" : log_uniform_coordinate(lo, hi) ? "log_uniform"
                                                                              : "uniform"}};
  }
  return j;
}

struct Trained {
  TrainState state;
  Observation observation;
  double test_metric = 0.0;
};

// One full run from a zero model.
inline Trained full_run(const Vector& lambda, const FeatureSet& features, const ScenarioData& data,
                        const ScenarioConfig& config, std::uint64_t seed, bool with_gradients) {
  TrainOptions opt;
  opt.adagrad = config.trainer.adagrad;
  opt.with_gradients = with_gradients;
  TrainResult r = train_with_warm_start(LinearLoss(lambda, features.names()), features,
                                        TrainState::zeros(features.num_params(), seed),
                                        *data.train, data.validation,
                                        Schedule::full_run(config.trainer.epochs), opt);
  const double test = logloss(r.state.theta, data.test);
  return {std::move(r.state), std::move(r.observation), test};
}

struct SeedResult {
  std::vector<CurvePoint> curves;
  std::vector<RegularizerSample> regularizer;
  std::vector<SeedError> errors;
  nlohmann::json details = nlohmann::json::object();
};

// Random search: `budget` independent full runs at sampled lambdas.
inline void random_search_seed(const ScenarioConfig& config, const FeatureSet& features,
                               const Hypercube& box, const ScenarioData& data,
                               std::uint64_t seed, SeedResult& out) {
  std::mt19937_64 engine(mix_seed(seed, 0x72616e64));
  std::vector<std::pair<double, double>> metrics;
  try {
    for (int run = 1; run <= config.effective_baseline_budget(); ++run) {
      const Vector lambda = sample_lambda(box, engine);
      const Trained t = full_run(lambda, features, data, config,
                                 mix_seed(seed, 1000 + static_cast<std::uint64_t>(run)), false);
      metrics.emplace_back(t.observation.ve, t.test_metric);
    }
  } catch (const ComputationError& e) {
    out.errors.push_back({seed, "random_search", e.what()});
    return;
  }
  auto c = make_curve("random_search", seed, metrics);
  out.curves.insert(out.curves.end(), c.begin(), c.end());
}

inline TuneConfig tune_config(const ScenarioConfig& config, const Hypercube& box,
                              const std::vector<std::string>& names, TuneMode mode, int iterations,
                              std::uint64_t seed) {
  TuneConfig t;
  t.mode = mode;
  t.max_iterations = iterations;
  t.feasible = box;
  t.epsilon = config.epsilon;
  t.use_gradients = config.use_gradients;
  t.seed = seed;
  t.alpha_min = config.alpha_min;
  t.feature_names = names;
  return t;
}

// Full-run TuneLoss. The bootstrap is one run of the default loss (the low
// corner of F) whose per-epoch checkpoints form the initial set; its final
// model seeds the best-so-far curve. Steps 1..budget are tuned runs.
inline void tuneloss_full_run_seed(const ScenarioConfig& config, const FeatureSet& features,
                                   const Hypercube& box, const ScenarioData& data,
                                   std::uint64_t seed, SeedResult& out) {
  const std::vector<std::string> names = features.names();
  TrainOptions opt;
  opt.adagrad = config.trainer.adagrad;
  opt.with_gradients = config.use_gradients;
  const LinearLoss default_loss(box.lo(), names);
  std::vector<std::pair<double, double>> metrics;
  BestSoFar prior;
  try {
    TrainState state = TrainState::zeros(features.num_params(), mix_seed(seed, 1000));
    std::vector<Observation> initial;
    for (int e = 0; e < config.trainer.epochs; ++e) {
      TrainResult r = train_with_warm_start(default_loss, features, state, *data.train,
                                            data.validation, Schedule::one_epoch(), opt);
      state = std::move(r.state);
      initial.push_back(std::move(r.observation));
    }
    prior.offer(initial.back().ve, logloss(state.theta, data.test));

    int run = 0;
    auto trainer = [&](const LinearLoss& loss, const TrainState&) {
      ++run;
      Trained t = full_run(loss.lambda(), features, data, config,
                           mix_seed(seed, 1000 + static_cast<std::uint64_t>(run)),
                           config.use_gradients);
      metrics.emplace_back(t.observation.ve, t.test_metric);
      return TrainerOutput<TrainState>{std::move(t.state), std::move(t.observation), 0.0, false};
    };
    TuneTrace<TrainState> trace =
        tune_loss(std::move(initial), state, trainer,
                  tune_config(config, box, names, TuneMode::kFullRun, config.budget, seed));
    nlohmann::json lambdas = nlohmann::json::array();
    for (const TuneRecord& rec : trace.records) lambdas.push_back(lossforge::detail::to_json_array(rec.lambda));
    out.details["tuneloss_lambdas"] = lambdas;
  } catch (const std::exception& e) {
    out.errors.push_back({seed, "tuneloss", e.what()});
    return;
  }
  auto c = make_curve("tuneloss", seed, metrics, prior);
  out.curves.insert(out.curves.end(), c.begin(), c.end());
}

inline SeedResult hyperparam_seed(const ScenarioConfig& config, std::uint64_t seed) {
  SeedResult out;
  const ScenarioData data = load_data(config, seed);
  const FeatureSet features = build_features(config.feature_set, data.train, mix_seed(seed, 7));
  const Hypercube box = feasible_box(config, features.names(), data.train->size());
  tuneloss_full_run_seed(config, features, box, data, seed, out);
  random_search_seed(config, features, box, data, seed, out);
  return out;
}

// Online regularizer learning. Both algorithms share the unregularized
// bootstrap epochs 1..t; afterwards the baseline keeps training with the
// plain log loss while TuneLoss relearns a convex piecewise-linear
// regularizer before every epoch. Curves run for `budget` epochs.
inline SeedResult online_seed(const ScenarioConfig& config, std::uint64_t seed) {
  SeedResult out;
  const ScenarioData data = load_data(config, seed);
  TrainOptions plain_opt;
  plain_opt.adagrad = config.trainer.adagrad;
  const Index n = data.train->num_params();
  const TrainState start = TrainState::zeros(n, mix_seed(seed, 1000));

  // Unregularized epochs with the log loss alone.
  const FeatureSet plain = build_features("l2", data.train, 0);
  const LinearLoss plain_loss(Vector::Unit(2, 1), plain.names());
  std::vector<std::pair<double, double>> base_metrics;
  std::vector<TrainState> base_states;
  try {
    TrainState s = start;
    for (int e = 0; e < config.budget; ++e) {
      TrainResult r = train_with_warm_start(plain_loss, plain, s, *data.train, data.validation,
                                            Schedule::one_epoch(), plain_opt);
      s = std::move(r.state);
      base_metrics.emplace_back(r.observation.ve, logloss(s.theta, data.test));
      base_states.push_back(s);
    }
  } catch (const ComputationError& e) {
    out.errors.push_back({seed, "unregularized", e.what()});
    return out;
  }
  auto base_curve = make_curve("unregularized", seed, base_metrics);
  out.curves.insert(out.curves.end(), base_curve.begin(), base_curve.end());

  std::vector<double> val_curve;
  for (const auto& m : base_metrics) val_curve.push_back(m.first);
  int t = 0;
  for (std::size_t e = 0; e < val_curve.size(); ++e) {
    t = static_cast<int>(e) + 1;
    if (e >= 1 && val_curve[e] > val_curve[e - 1]) break;
  }
  out.details["overfit_epoch"] = t;

  const Breakpoints bp = select_breakpoints(base_states.front().theta, config.breakpoints);
  const FeatureSet features = pwl_regularizer_features(data.train, bp);
  const std::vector<std::string> names = features.names();
  const Hypercube box = feasible_box(config, names, data.train->size());
  std::vector<std::pair<double, double>> metrics(base_metrics.begin(), base_metrics.begin() + t);
  try {
    std::vector<Observation> initial;
    for (int e = 0; e < t; ++e)
      initial.push_back(evaluate_observation(base_states[static_cast<std::size_t>(e)].theta,
                                             features, data.validation, config.use_gradients));
    if (t < config.budget) {
      TrainOptions opt = plain_opt;
      opt.with_gradients = config.use_gradients;
      auto trainer = [&](const LinearLoss& loss, const TrainState& warm) {
        TrainResult r = train_with_warm_start(loss, features, warm, *data.train, data.validation,
                                              Schedule::one_epoch(), opt);
        metrics.emplace_back(r.observation.ve, logloss(r.state.theta, data.test));
        return TrainerOutput<TrainState>{std::move(r.state), std::move(r.observation),
                                         r.train_loss, false};
      };
      TuneTrace<TrainState> trace =
          tune_loss(std::move(initial), base_states[static_cast<std::size_t>(t - 1)], trainer,
                    tune_config(config, box, names, TuneMode::kOnline, config.budget - t, seed));
      const double lo = bp.x.front(), hi = bp.x.back();
      const double pad = 0.1 * std::max(hi - lo, 1e-12);
      for (const TuneRecord& rec : trace.records) {
        const Vector w = rec.lambda.tail(2 * bp.size());
        std::vector<double> xs{lo - pad};
        xs.insert(xs.end(), bp.x.begin(), bp.x.end());
        xs.push_back(hi + pad);
        for (double x : xs)
          out.regularizer.push_back({seed, t + rec.iteration, x, pwl_evaluate(w, bp, x)});
      }
    }
  } catch (const std::exception& e) {
    out.errors.push_back({seed, "tuneloss", e.what()});
    return out;
  }
  auto c = make_curve("tuneloss", seed, metrics);
  out.curves.insert(out.curves.end(), c.begin(), c.end());
  return out;
}

// Mixture of losses ------------------------------------------------------------

struct MixtureData {
  std::vector<std::shared_ptr<const Dataset>> components;
  Dataset validation, test;
  Index matching = 1;  // component drawn from the validation distribution
};

// Component `matching` shares the class means of the validation and test
// data; the others use independently drawn means.
inline MixtureData make_mixture_data(const SyntheticSpec& spec, int components) {
  spec.validate();
  require(components >= 2, "make_mixture_data: need at least 2 components");
  const Index quarter = spec.num_examples / 4;
  const Index train_n = spec.num_examples - 2 * quarter;
  MixtureData m;
  m.matching = std::min<Index>(1, components - 1);
  const Matrix target = class_means(spec, 0);
  for (int c = 0; c < components; ++c) {
    const Matrix means = c == m.matching ? target : class_means(spec, 100 + c);
    m.components.push_back(std::make_shared<const Dataset>(sample_gaussian_classes(
        means, train_n, spec.label_noise, mix_seed(spec.seed, 200 + c))));
  }
  m.validation = sample_gaussian_classes(target, quarter, spec.label_noise, mix_seed(spec.seed, 3));
  m.test = sample_gaussian_classes(target, quarter, spec.label_noise, mix_seed(spec.seed, 4));
  return m;
}

// Each step adds the lambda-weighted gradients of example i from every
// component.
inline Trained train_mixture(const Vector& lambda, const FeatureSet& features,
                             const MixtureData& m, const ScenarioConfig& config,
                             std::uint64_t seed, bool with_gradients) {
  TrainOptions opt;
  opt.adagrad = config.trainer.adagrad;
  opt.with_gradients = with_gradients;
  TrainResult r = train_with_warm_start(LinearLoss(lambda, features.names()), features,
                                        TrainState::zeros(features.num_params(), seed),
                                        *m.components.front(), m.validation,
                                        Schedule::full_run(config.trainer.epochs), opt);
  const double test = logloss(r.state.theta, m.test);
  return {std::move(r.state), std::move(r.observation), test};
}

// Points of the simplex {p >= 0, sum p = 1} with coordinates in multiples of
// 1 / (points_per_axis - 1).
inline std::vector<Vector> simplex_grid(int dims, int points_per_axis) {
  require(dims >= 1 && points_per_axis >= 2, "simplex_grid: bad sizes");
  const int steps = points_per_axis - 1;
  std::vector<Vector> out;
  std::vector<int> counts(static_cast<std::size_t>(dims), 0);
  std::function<void(int, int)> rec = [&](int dim, int left) {
    if (dim == dims - 1) {
      counts[static_cast<std::size_t>(dim)] = left;
      Vector p(dims);
      for (int a = 0; a < dims; ++a) p(a) = counts[static_cast<std::size_t>(a)] / double(steps);
      out.push_back(p);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      counts[static_cast<std::size_t>(dim)] = c;
      rec(dim + 1, left - c);
    }
  };
  rec(0, steps);
  return out;
}

struct MixtureOracle {
  Vector weights;
  double ve = kInfinity;
};

inline MixtureOracle mixture_grid_oracle(const FeatureSet& features, const MixtureData& m,
                                         const ScenarioConfig& config, std::uint64_t seed) {
  MixtureOracle best;
  for (const Vector& p : simplex_grid(static_cast<int>(m.components.size()), config.grid_points)) {
    const Trained t = train_mixture(p, features, m, config, mix_seed(seed, 1000), false);
    if (t.observation.ve < best.ve) best = {p, t.observation.ve};
  }
  return best;
}

inline SeedResult mixture_seed(const ScenarioConfig& config, std::uint64_t seed) {
  SeedResult out;
  SyntheticSpec spec = config.dataset.synthetic;
  if (config.dataset.vary_with_seed) spec.seed = mix_seed(spec.seed, seed);
  const MixtureData m = make_mixture_data(spec, config.components);
  const FeatureSet features = mixture_features(m.components);
  const std::vector<std::string> names = features.names();
  const Hypercube box = feasible_box(config, names, m.components.front()->size());

  std::vector<std::pair<double, double>> metrics;
  BestSoFar prior;
  try {
    TrainOptions opt;
    opt.adagrad = config.trainer.adagrad;
    opt.with_gradients = config.use_gradients;
    const Vector uniform = Vector::Constant(box.dimension(), 1.0 / box.dimension());
    const LinearLoss default_loss(uniform, names);
    TrainState state = TrainState::zeros(features.num_params(), mix_seed(seed, 1000));
    std::vector<Observation> initial;
    for (int e = 0; e < config.trainer.epochs; ++e) {
      TrainResult r = train_with_warm_start(default_loss, features, state, *m.components.front(),
                                            m.validation, Schedule::one_epoch(), opt);
      state = std::move(r.state);
      initial.push_back(std::move(r.observation));
    }
    prior.offer(initial.back().ve, logloss(state.theta, m.test));
    int run = 0;
    Vector best_lambda = uniform;
    double best_ve = initial.back().ve;
    auto trainer = [&](const LinearLoss& loss, const TrainState&) {
      ++run;
      Trained t = train_mixture(loss.lambda(), features, m, config,
                                mix_seed(seed, 1000 + static_cast<std::uint64_t>(run)),
                                config.use_gradients);
      metrics.emplace_back(t.observation.ve, t.test_metric);
      if (t.observation.ve < best_ve) {
        best_ve = t.observation.ve;
        best_lambda = loss.lambda();
      }
      return TrainerOutput<TrainState>{std::move(t.state), std::move(t.observation), 0.0, false};
    };
    tune_loss(std::move(initial), state, trainer,
              tune_config(config, box, names, TuneMode::kFullRun, config.budget, seed));
    const MixtureOracle oracle = mixture_grid_oracle(features, m, config, seed);
    out.details["learned_weights"] = lossforge::detail::to_json_array(normalize_mixture(best_lambda));
    out.details["learned_ve"] = best_ve;
    out.details["oracle_weights"] = lossforge::detail::to_json_array(oracle.weights);
    out.details["oracle_ve"] = oracle.ve;
    out.details["matching_component"] = m.matching;
  } catch (const std::exception& e) {
    out.errors.push_back({seed, "tuneloss", e.what()});
    return out;
  }
  auto c = make_curve("tuneloss", seed, metrics, prior);
  out.curves.insert(out.curves.end(), c.begin(), c.end());
  return out;
}

// Perfect-linear recovery -----------------------------------------------------

struct PerfectLinearInstance {
  Vector lambda;  // last coordinate pinned to 1
  double alpha = 1.0;
  std::vector<Observation> observations;  // ascending ve after construction
  Hypercube feasible;
};

// Observations with ve = lambda . fv / alpha and grad_ve = J lambda / alpha.
// The feasible box pins the last coordinate to 1 and gives the others
// [0, 1].
inline PerfectLinearInstance perfect_linear_instance(std::uint64_t seed, Index k, Index n, int m) {
  require(k >= 2 && n >= 1 && m >= 1, "perfect_linear_instance: bad sizes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  PerfectLinearInstance inst;
  inst.lambda.resize(k);
  for (Index a = 0; a + 1 < k; ++a) inst.lambda(a) = 0.05 + 0.9 * uniform01(rng);
  inst.lambda(k - 1) = 1.0;
  inst.alpha = 0.5 + 2.0 * uniform01(rng);
  for (int i = 0; i < m; ++i) {
    Observation o;
    o.fv.resize(k);
    for (Index a = 0; a < k; ++a) o.fv(a) = std::abs(normal(rng)) + 0.1;
    Matrix j(n, k);
    for (Index r = 0; r < n; ++r)
      for (Index a = 0; a < k; ++a) j(r, a) = normal(rng);
    o.ve = inst.lambda.dot(o.fv) / inst.alpha;
    o.grad_ve = j * inst.lambda / inst.alpha;
    o.jacobian = std::move(j);
    o.model_id = "m" + std::to_string(i);
    inst.observations.push_back(std::move(o));
  }
  Vector lo = Vector::Zero(k), hi = Vector::Ones(k);
  lo(k - 1) = 1.0;
  inst.feasible = Hypercube(lo, hi);
  return inst;
}

struct RecoveryOutcome {
  double relative_error = kInfinity;
  Index rank = 0;  // identifiability rank; k means unique up to scale
  bool unique = false;
};

inline RecoveryOutcome recover(const PerfectLinearInstance& inst, int m, bool with_gradients) {
  std::vector<Observation> obs(inst.observations.begin(), inst.observations.begin() + m);
  if (!with_gradients)
    for (Observation& o : obs) {
      o.grad_ve.reset();
      o.jacobian.reset();
    }
  RecoveryOutcome r;
  const Index k = inst.lambda.size();
  r.rank = identifiability_rank(obs, with_gradients);
  r.unique = r.rank == k;
  CostParams params;
  params.epsilon = with_gradients ? default_epsilon(obs) : 0.0;
  const LearnLossResult learned = learn_loss(obs, inst.feasible, params);
  r.relative_error = (learned.lambda - inst.lambda).norm() / inst.lambda.norm();
  return r;
}

// Curves: algorithm "gradients" uses one observation, "loss_only" uses
// 1..k+1. val_metric is the relative lambda error and test_metric the
// dimension of the zero-cost solution set beyond scale (k - rank).
inline SeedResult recovery_seed(const ScenarioConfig& config, std::uint64_t seed) {
  SeedResult out;
  const Index k = config.recovery_features;
  const PerfectLinearInstance inst = perfect_linear_instance(
      mix_seed(seed, 9), k, config.recovery_params, static_cast<int>(k) + 1);
  try {
    const RecoveryOutcome g = recover(inst, 1, true);
    auto c = make_curve("gradients", seed,
                        {{g.relative_error, static_cast<double>(k - g.rank)}});
    out.curves.insert(out.curves.end(), c.begin(), c.end());
    std::vector<std::pair<double, double>> loss_only;
    for (int m = 1; m <= k + 1; ++m) {
      const RecoveryOutcome r = recover(inst, m, false);
      loss_only.emplace_back(r.relative_error, static_cast<double>(k - r.rank));
    }
    auto l = make_curve("loss_only", seed, loss_only);
    out.curves.insert(out.curves.end(), l.begin(), l.end());
  } catch (const std::exception& e) {
    out.errors.push_back({seed, "learnloss", e.what()});
  }
  return out;
}

// Entry points ------------------------------------------------------------------

inline RunReport run_seeds(const ScenarioConfig& config,
                           const std::function<SeedResult(std::uint64_t)>& per_seed,
                           int threads = thread_count()) {
  std::vector<SeedResult> results(config.seeds.size());
  parallel_for(config.seeds.size(), threads,
               [&](std::size_t i) { results[i] = per_seed(config.seeds[i]); });
  RunReport report;
  report.scenario = to_string(config.scenario);
  report.config = to_json(config);
  // Algorithms in first-seen order, then seeds in config order.
  std::vector<std::string> algorithms;
  for (const SeedResult& r : results)
    for (const CurvePoint& p : r.curves)
      if (std::find(algorithms.begin(), algorithms.end(), p.algorithm) == algorithms.end())
        algorithms.push_back(p.algorithm);
  for (const std::string& a : algorithms)
    for (const SeedResult& r : results)
      for (const CurvePoint& p : r.curves)
        if (p.algorithm == a) report.curves.push_back(p);
  nlohmann::json per_seed_details = nlohmann::json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    report.regularizer.insert(report.regularizer.end(), results[i].regularizer.begin(),
                              results[i].regularizer.end());
    report.errors.insert(report.errors.end(), results[i].errors.begin(), results[i].errors.end());
    nlohmann::json d = results[i].details;
    d["seed"] = config.seeds[i];
    per_seed_details.push_back(d);
  }
  report.details["seeds"] = per_seed_details;
  return report;
}

inline RunReport random_search_baseline(const ScenarioConfig& config, int threads = thread_count()) {
  config.validate();
  return run_seeds(
      config,
      [&](std::uint64_t seed) {
        SeedResult out;
        const ScenarioData data = load_data(config, seed);
        const FeatureSet features =
            build_features(config.feature_set, data.train, mix_seed(seed, 7));
        const Hypercube box = feasible_box(config, features.names(), data.train->size());
        random_search_seed(config, features, box, data, seed, out);
        return out;
      },
      threads);
}

inline RunReport run_scenario(const ScenarioConfig& config, int threads = thread_count()) {
  config.validate();
  std::function<SeedResult(std::uint64_t)> fn;
  switch (config.scenario) {
    case Scenario::kHyperparamTuning:
      fn = [&](std::uint64_t s) { return hyperparam_seed(config, s); };
      break;
    case Scenario::kOnlineRegularizer:
      fn = [&](std::uint64_t s) { return online_seed(config, s); };
      break;
    case Scenario::kMixtureLoss:
      fn = [&](std::uint64_t s) { return mixture_seed(config, s); };
      break;
    case Scenario::kPerfectLinearRecovery:
      fn = [&](std::uint64_t s) { return recovery_seed(config, s); };
      break;
  }
  RunReport report = run_seeds(config, fn, threads);
  if (config.scenario == Scenario::kHyperparamTuning) {
    // Random-search distribution per coordinate, on the first seed's box.
    const ScenarioData data = load_data(config, config.seeds.front());
    const FeatureSet features = build_features(config.feature_set, data.train, 0);
    report.config["sampling"] = sampling_json(
        feasible_box(config, features.names(), data.train->size()), features.names());
  }
  return report;
}

// CSV emission --------------------------------------------------------------------

inline constexpr const char* kCurvesHeader =
    "scenario,algorithm,seed,step,val_metric,test_metric,best_so_far_val,best_so_far_test";
inline constexpr const char* kSummaryHeader =
    "scenario,algorithm,step,seeds,mean_best_so_far_val,median_best_so_far_val,"
    "mean_best_so_far_test,median_best_so_far_test";
inline constexpr const char* kRegularizerHeader = "scenario,seed,epoch,x,r";
inline constexpr const char* kErrorsHeader = "scenario,algorithm,seed,message";

inline double median_of(std::vector<double> v) {
  require(!v.empty(), "median_of: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct SummaryRow {
  std::string algorithm;
  int step = 0;
  std::size_t seeds = 0;
  double mean_val = 0.0, median_val = 0.0, mean_test = 0.0, median_test = 0.0;
};

inline std::vector<SummaryRow> summarize(const RunReport& report) {
  std::vector<std::pair<std::string, int>> keys;
  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const CurvePoint& p : report.curves) {
    auto key = std::make_pair(p.algorithm, p.step);
    if (!acc.count(key)) keys.push_back(key);
    acc[key].first.push_back(p.best_so_far_val);
    acc[key].second.push_back(p.best_so_far_test);
  }
  // Algorithms in first-seen order, then steps ascending.
  std::map<std::string, std::size_t> rank;
  for (const auto& k : keys) rank.emplace(k.first, rank.size());
  std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return rank.at(a.first) < rank.at(b.first);
    return a.second < b.second;
  });
  std::vector<SummaryRow> rows;
  for (const auto& key : keys) {
    const auto& [vals, tests] = acc[key];
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    rows.push_back({key.first, key.second, vals.size(), mean(vals), median_of(vals), mean(tests),
                    median_of(tests)});
  }
  return rows;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline void write_curves(std::ostream& out, const RunReport& report) {
  out << kCurvesHeader << '\n';
  for (const CurvePoint& p : report.curves)
    out << report.scenario << ',' << p.algorithm << ',' << p.seed << ',' << p.step << ','
        << format_double(p.val_metric) << ',' << format_double(p.test_metric) << ','
        << format_double(p.best_so_far_val) << ',' << format_double(p.best_so_far_test) << '\n';
}

inline void write_summary(std::ostream& out, const RunReport& report) {
  out << kSummaryHeader << '\n';
  for (const SummaryRow& r : summarize(report))
    out << report.scenario << ',' << r.algorithm << ',' << r.step << ',' << r.seeds << ','
        << format_double(r.mean_val) << ',' << format_double(r.median_val) << ','
        << format_double(r.mean_test) << ',' << format_double(r.median_test) << '\n';
}

// Rows grouped by (seed, epoch) with x strictly increasing inside a group.
inline void write_regularizer(std::ostream& out, const RunReport& report) {
  out << kRegularizerHeader << '\n';
  std::vector<RegularizerSample> rows = report.regularizer;
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.seed != b.seed) return a.seed < b.seed;
    if (a.epoch != b.epoch) return a.epoch < b.epoch;
    return a.x < b.x;
  });
  for (const RegularizerSample& s : rows)
    out << report.scenario << ',' << s.seed << ',' << s.epoch << ',' << format_double(s.x) << ','
        << format_double(s.r) << '\n';
}

inline void write_errors(std::ostream& out, const RunReport& report) {
  out << kErrorsHeader << '\n';
  for (const SeedError& e : report.errors)
    out << report.scenario << ',' << e.algorithm << ',' << e.seed << ',' << csv_escape(e.message)
        << '\n';
}

inline void emit_report(const RunReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ComputationError("emit_report: cannot create '" + out_dir + "': " + ec.message());
  auto write = [&](const char* name, const std::function<void(std::ostream&)>& body) {
    const fs::path path = fs::path(out_dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ComputationError("emit_report: cannot write " + path.string());
    body(out);
    if (!out) throw ComputationError("emit_report: write failed for " + path.string());
  };
  write("curves.csv", [&](std::ostream& o) { write_curves(o, report); });
  write("summary.csv", [&](std::ostream& o) { write_summary(o, report); });
  write("learned_regularizer.csv", [&](std::ostream& o) { write_regularizer(o, report); });
  write("errors.csv", [&](std::ostream& o) { write_errors(o, report); });
  write("config.json", [&](std::ostream& o) {
    nlohmann::json j = report.config;
    j["details"] = report.details;
    o << j.dump(2) << '\n';
  });
}

// Parsing -------------------------------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) {
    if (s == "inf") return kInfinity;
    throw InvalidArgument("report: bad number '" + s + "'");
  }
  return v;
}

// Reads curves.csv back; the scenario comes from the first row.
inline RunReport read_curves(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kCurvesHeader,
          "report: curves.csv header mismatch");
  RunReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    require(f.size() == 8, "report: curves.csv row needs 8 fields");
    if (report.scenario.empty()) report.scenario = f[0];
    CurvePoint p;
    p.algorithm = f[1];
    p.seed = std::stoull(f[2]);
    p.step = std::stoi(f[3]);
    p.val_metric = parse_double(f[4]);
    p.test_metric = parse_double(f[5]);
    p.best_so_far_val = parse_double(f[6]);
    p.best_so_far_test = parse_double(f[7]);
    report.curves.push_back(std::move(p));
  }
  return report;
}

inline RunReport read_report_dir(const std::string& dir) {
  const std::filesystem::path base(dir);
  std::ifstream curves(base / "curves.csv");
  require(static_cast<bool>(curves), "report: cannot open " + (base / "curves.csv").string());
  RunReport report = read_curves(curves);
  std::ifstream config(base / "config.json");
  if (config) {
    try {
      report.config = nlohmann::json::parse(config);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("report: bad config.json: ") + e.what());
    }
    if (report.scenario.empty() && report.config.contains("scenario"))
      report.scenario = report.config["scenario"].get<std::string>();
  }
  return report;
}

}  // namespace lossforge::harness
