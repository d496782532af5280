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

// AdaGrad training of softmax regression against a linear loss lambda . phi,
// plus dataset ingestion and checkpoint files.

#pragma once

#include "lossforge/features.hpp"
#include "lossforge/losscore.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace lossforge {

struct TrainState {
  Vector theta;
  Vector accumulators;  // running sums of squared gradients
  int epoch = 0;
  std::uint64_t seed = 0;

  static TrainState zeros(Index num_params, std::uint64_t seed) {
    return {Vector::Zero(num_params), Vector::Zero(num_params), 0, seed};
  }

  void validate() const {
    require(theta.size() == accumulators.size(), "TrainState: shape mismatch");
    require(theta.allFinite() && accumulators.allFinite(), "TrainState: non-finite values");
    require((accumulators.array() >= 0.0).all(), "TrainState: negative accumulator");
    require(epoch >= 0, "TrainState: negative epoch");
  }
};

struct AdagradSettings {
  double base_learning_rate = 1.0;
  double learning_rate_multiplier = 0.1;
  double delta = 1e-8;

  double learning_rate() const { return base_learning_rate * learning_rate_multiplier; }
  void validate() const {
    require(std::isfinite(base_learning_rate) && base_learning_rate >= 0.0,
            "AdagradSettings: base learning rate must be >= 0");
    require(std::isfinite(learning_rate_multiplier) && learning_rate_multiplier >= 0.0,
            "AdagradSettings: learning rate multiplier must be >= 0");
    require(delta > 0.0, "AdagradSettings: delta must be > 0");
  }
};

inline void adagrad_update(TrainState& state, const Vector& grad, double lr,
                           double delta = 1e-8) {
  state.accumulators.array() += grad.array().square();
  state.theta.array() -= lr * grad.array() / (state.accumulators.array().sqrt() + delta);
}

inline TrainState adagrad_step(TrainState state, const Vector& grad, double lr) {
  require(grad.size() == state.theta.size(), "adagrad_step: gradient size mismatch");
  adagrad_update(state, grad, lr);
  return state;
}

struct Schedule {
  enum class Kind { kOneEpoch, kFullRun };
  Kind kind = Kind::kOneEpoch;
  int epochs = 1;

  static Schedule one_epoch() { return {Kind::kOneEpoch, 1}; }
  static Schedule full_run(int epochs) {
    require(epochs >= 1, "Schedule: epochs must be >= 1");
    return {Kind::kFullRun, epochs};
  }
};

// ve is the validation log loss; fv is phi on the training features. Column
// j of the Jacobian is grad phi_j.
inline Observation evaluate_observation(const Vector& theta, const FeatureSet& features,
                                        const Dataset& validation, bool with_gradients) {
  Observation obs;
  if (with_gradients) {
    auto [ve, grad] = logloss_and_grad(theta, validation);
    obs.ve = ve;
    obs.grad_ve = std::move(grad);
    obs.jacobian = features.jacobian(theta);
  } else {
    obs.ve = logloss(theta, validation);
  }
  obs.fv = features.values(theta);
  return obs;
}

struct TrainOptions {
  AdagradSettings adagrad;
  bool with_gradients = false;
};

struct TrainResult {
  TrainState state;
  Observation observation;
  double train_loss = 0.0;  // lambda . phi at the final model
};

// Batch-size-1 AdaGrad over a per-epoch shuffle of the training split. Each
// epoch's order and any dropout masks derive from (state.seed, epoch).
inline TrainResult train_with_warm_start(const LinearLoss& loss, const FeatureSet& features,
                                         const TrainState& start, const Dataset& train,
                                         const Dataset& validation, const Schedule& schedule,
                                         const TrainOptions& options = {}) {
  require(loss.dimension() == features.dimension(),
          "train_with_warm_start: loss dimension must match feature count");
  require(start.theta.size() == features.num_params(),
          "train_with_warm_start: start model size mismatch");
  require(train.size() > 0, "train_with_warm_start: empty training split");
  require(features.num_examples() == 0 || features.num_examples() == train.size(),
          "train_with_warm_start: features were built on a different training split");
  options.adagrad.validate();
  start.validate();

  const double lr = options.adagrad.learning_rate();
  TrainState state = start;
  Vector grad(state.theta.size());
  for (int e = 0; e < schedule.epochs; ++e) {
    std::mt19937_64 engine(mix_seed(state.seed, static_cast<std::uint64_t>(state.epoch)));
    for (Index example : shuffled_indices(train.size(), engine)) {
      grad.setZero();
      features.add_example_gradient(state.theta, example, engine, loss.lambda(), grad);
      if (!grad.allFinite())
        throw ComputationError("training diverged: non-finite gradient at epoch " +
                               std::to_string(state.epoch + 1));
      adagrad_update(state, grad, lr, options.adagrad.delta);
    }
    ++state.epoch;
    if (!state.theta.allFinite())
      throw ComputationError("training diverged: non-finite model after epoch " +
                             std::to_string(state.epoch));
  }
  TrainResult result;
  result.observation =
      evaluate_observation(state.theta, features, validation, options.with_gradients);
  result.train_loss = evaluate_loss(loss, result.observation.fv);
  if (!std::isfinite(result.train_loss) || !std::isfinite(result.observation.ve))
    throw ComputationError("training diverged: non-finite loss after epoch " +
                           std::to_string(state.epoch));
  result.state = std::move(state);
  return result;
}

// Dataset ingestion -------------------------------------------------------------

// CSV with a header row; the last column is an integer class label.
inline Dataset read_csv_dataset(std::istream& in, int classes = 0) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "CSV dataset: missing header");
  const auto columns = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
  require(columns >= 2, "CSV dataset: need at least one feature and a label column");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        require(cell.find_first_not_of(" \t\r", used) == std::string::npos, "trailing text");
      } catch (const std::exception&) {
        throw InvalidArgument("CSV dataset line " + std::to_string(line_no) +
                              ": bad number '" + cell + "'");
      }
    }
    require(static_cast<Index>(values.size()) == columns,
            "CSV dataset line " + std::to_string(line_no) + ": wrong column count");
    const double label = values.back();
    require(label >= 0 && label == std::floor(label),
            "CSV dataset line " + std::to_string(line_no) + ": label must be a non-negative integer");
    labels.push_back(static_cast<int>(label));
    values.pop_back();
    rows.push_back(std::move(values));
  }
  require(!rows.empty(), "CSV dataset: no rows");
  Dataset data;
  data.x.resize(static_cast<Index>(rows.size()), columns - 1);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < columns - 1; ++c)
      data.x(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  data.y = std::move(labels);
  const int max_label = *std::max_element(data.y.begin(), data.y.end());
  data.classes = classes > 0 ? classes : std::max(2, max_label + 1);
  data.validate();
  return data;
}

inline Dataset read_csv_dataset_file(const std::string& path, int classes = 0) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset: " + path);
  return read_csv_dataset(in, classes);
}

// Per-column z-score fitted on one split and applied to others.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    require(x.rows() > 0, "Standardizer: empty data");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().mean();
      s.scale(c) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  void apply(Dataset& data) const {
    require(data.dim() == mean.size(), "Standardizer: column count mismatch");
    data.x = ((data.x.rowwise() - mean.transpose()).array().rowwise() /
              scale.transpose().array())
                 .matrix();
  }
};

// Checkpoints -------------------------------------------------------------------
//
// 16-byte header ("LFCKPT", 2 zero bytes, u32 version, u32 n), then n theta
// doubles, n accumulator doubles, i64 epoch, u64 seed; host byte order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const TrainState& state) {
  state.validate();
  char magic[8] = {'L', 'F', 'C', 'K', 'P', 'T', 0, 0};
  const std::uint32_t version = kCheckpointVersion;
  const auto n = static_cast<std::uint32_t>(state.theta.size());
  const std::int64_t epoch = state.epoch;
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(state.theta.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  out.write(reinterpret_cast<const char*>(state.accumulators.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  out.write(reinterpret_cast<const char*>(&epoch), 8);
  out.write(reinterpret_cast<const char*>(&state.seed), 8);
  if (!out) throw ComputationError("checkpoint write failed");
}

inline TrainState read_checkpoint(std::istream& in) {
  char magic[8];
  std::uint32_t version = 0, n = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  require(static_cast<bool>(in) && std::memcmp(magic, "LFCKPT\0\0", 8) == 0,
          "checkpoint: bad magic");
  require(version == kCheckpointVersion, "checkpoint: unsupported version");
  TrainState state;
  state.theta.resize(n);
  state.accumulators.resize(n);
  std::int64_t epoch = 0;
  in.read(reinterpret_cast<char*>(state.theta.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(state.accumulators.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(&epoch), 8);
  in.read(reinterpret_cast<char*>(&state.seed), 8);
  require(static_cast<bool>(in), "checkpoint: truncated file");
  state.epoch = static_cast<int>(epoch);
  state.validate();
  return state;
}

inline void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ComputationError("cannot write checkpoint: " + path);
  write_checkpoint(out, state);
}

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace lossforge
