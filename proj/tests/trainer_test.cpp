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

#include "lossforge/trainer.hpp"
#include "lossforge/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_data.hpp"

namespace lossforge {
namespace {

using testing::blobs;
using testing::close_relative;
using testing::random_theta;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

LinearLoss logloss_only(Index k, Index primary) {
  Vector lambda = Vector::Zero(k);
  lambda(primary) = 1.0;
  std::vector<std::string> names;
  for (Index j = 0; j < k; ++j) names.push_back("f" + std::to_string(j));
  return LinearLoss(lambda, names);
}

TEST(Logloss, ZeroModelBalanced) {
  Dataset data = blobs(1, 10, 3, 2, 1.0);
  auto [loss, grad] = logloss_and_grad(Vector::Zero(data.num_params()), data);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(grad.tail(2).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Logloss, SingleExampleLogitGradient) {
  Dataset data;
  data.x = Matrix::Zero(1, 1);
  data.y = {0};
  data.classes = 2;
  auto [loss, grad] = logloss_and_grad(Vector::Zero(4), data);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(grad(2), -0.5);
  EXPECT_DOUBLE_EQ(grad(3), 0.5);
}

TEST(Logloss, GradientMatchesFiniteDifferences) {
  Dataset data = blobs(2, 10, 4, 3, 1.0);
  std::mt19937_64 rng(3);
  for (int point = 0; point < 20; ++point) {
    const Vector theta = random_theta(rng, data.num_params());
    auto f = [&](const Vector& t) { return logloss(t, data); };
    const Vector fd = oracle::finite_difference_gradient(f, theta, 1e-5);
    EXPECT_TRUE(close_relative(logloss_and_grad(theta, data).second, fd, 1e-6));
    EXPECT_EQ(logloss(theta, data), logloss_and_grad(theta, data).first);
  }
}

TEST(Logloss, RejectsEmptyOrMisshapen) {
  Dataset empty;
  empty.x = Matrix::Zero(0, 2);
  empty.classes = 2;
  EXPECT_THROW(logloss_and_grad(Vector::Zero(6), empty), InvalidArgument);
  Dataset data = blobs(4, 4, 2, 2, 1.0);
  EXPECT_THROW(logloss(Vector::Zero(5), data), InvalidArgument);
}

TEST(FiniteDifference, Basics) {
  auto square = [](const Vector& x) { return x(0) * x(0); };
  EXPECT_NEAR(oracle::finite_difference_gradient(square, vec({3}), 1e-5)(0), 6.0, 1e-8);
  auto constant = [](const Vector&) { return 4.0; };
  EXPECT_EQ(oracle::finite_difference_gradient(constant, vec({1, 2}), 1e-3), vec({0, 0}));
  EXPECT_THROW(oracle::finite_difference_gradient(square, vec({1}), 0.0), InvalidArgument);
}

TEST(Adagrad, FirstStep) {
  TrainState s = adagrad_step(TrainState::zeros(1, 0), vec({2}), 1.0);
  EXPECT_DOUBLE_EQ(s.accumulators(0), 4.0);
  EXPECT_DOUBLE_EQ(s.theta(0), -2.0 / (2.0 + 1e-8));
}

TEST(Adagrad, ZeroGradientOnlyTouchesAccumulators) {
  TrainState s{vec({0.5, -1}), vec({1, 2}), 3, 9};
  TrainState t = adagrad_step(s, vec({0, 0}), 0.1);
  EXPECT_EQ(t.theta, s.theta);
  EXPECT_EQ(t.accumulators, s.accumulators);
  EXPECT_EQ(t.epoch, 3);
}

TEST(Adagrad, SecondStepClosedForm) {
  const double g = 0.7, lr = 0.3;
  TrainState s1 = adagrad_step(TrainState::zeros(1, 0), vec({g}), lr);
  TrainState s2 = adagrad_step(s1, vec({g}), lr);
  EXPECT_NEAR(s1.theta(0) - s2.theta(0), lr * g / (std::sqrt(2 * g * g) + 1e-8), 1e-15);
  EXPECT_NEAR(s1.theta(0) - s2.theta(0), lr / std::sqrt(2.0), 1e-7);
}

struct Fixture {
  std::shared_ptr<const Dataset> train;
  Dataset validation;
  FeatureSet features;
};

Fixture make_fixture(std::uint64_t seed, Index n, Index d, int classes, double separation) {
  Fixture f;
  Dataset train = blobs(seed, n, d, classes, separation);
  train.split = Split::kTrain;
  f.train = std::make_shared<const Dataset>(std::move(train));
  f.validation = blobs(seed + 1000, n, d, classes, separation);
  f.validation.split = Split::kValidation;
  f.features = standard_regularizer_features(f.train, {0.5, 4, seed});
  return f;
}

TEST(Train, OneEpochTakesOneStepPerExample) {
  Fixture f = make_fixture(5, 3, 2, 3, 1.0);
  const LinearLoss loss = logloss_only(5, 4);
  const TrainState start = TrainState::zeros(f.train->num_params(), 77);
  TrainResult r = train_with_warm_start(loss, f.features, start, *f.train, f.validation,
                                        Schedule::one_epoch());
  EXPECT_EQ(r.state.epoch, 1);
  // Replay three manual steps in the documented order.
  TrainState manual = start;
  std::mt19937_64 engine(mix_seed(77, 0));
  const auto order = shuffled_indices(3, engine);
  ASSERT_EQ(order.size(), 3u);
  for (Index ex : order) {
    Vector g = Vector::Zero(manual.theta.size());
    f.features.add_example_gradient(manual.theta, ex, engine, loss.lambda(), g);
    manual = adagrad_step(manual, g, 0.1);
  }
  EXPECT_EQ(r.state.theta, manual.theta);
  EXPECT_EQ(r.state.accumulators, manual.accumulators);
}

TEST(Train, SeparableDataIsFit) {
  Fixture f = make_fixture(6, 40, 2, 2, 8.0);
  TrainResult r = train_with_warm_start(logloss_only(5, 4), f.features,
                                        TrainState::zeros(f.train->num_params(), 1), *f.train,
                                        f.validation, Schedule::full_run(200));
  EXPECT_EQ(classification_error(r.state.theta, *f.train), 0.0);
  EXPECT_EQ(r.state.epoch, 200);
}

TEST(Train, ZeroLearningRateKeepsModel) {
  Fixture f = make_fixture(7, 10, 3, 2, 1.0);
  std::mt19937_64 rng(8);
  TrainState start = TrainState::zeros(f.train->num_params(), 2);
  start.theta = random_theta(rng, start.theta.size());
  TrainOptions opt;
  opt.adagrad.learning_rate_multiplier = 0.0;
  TrainResult r = train_with_warm_start(logloss_only(5, 4), f.features, start, *f.train,
                                        f.validation, Schedule::full_run(3), opt);
  EXPECT_EQ(r.state.theta, start.theta);
}

TEST(Train, Deterministic) {
  Fixture f = make_fixture(9, 20, 3, 3, 1.0);
  LinearLoss loss(vec({0.01, 0.02, 0.05, 0.3, 1.0}), f.features.names());
  auto run = [&] {
    return train_with_warm_start(loss, f.features,
                                 TrainState::zeros(f.train->num_params(), 4), *f.train,
                                 f.validation, Schedule::full_run(5));
  };
  TrainResult a = run(), b = run();
  EXPECT_EQ(a.state.theta, b.state.theta);
  EXPECT_EQ(a.observation.ve, b.observation.ve);
  EXPECT_EQ(a.observation.fv, b.observation.fv);
}

TEST(Train, TrainingLossDecreasesAtEpochBoundaries) {
  Fixture f = make_fixture(10, 60, 4, 3, 1.0);
  LinearLoss loss(vec({0.001, 0.01, 0.05, 0.0, 1.0}), f.features.names());
  TrainState state = TrainState::zeros(f.train->num_params(), 5);
  double previous = evaluate_loss(loss, f.features.values(state.theta));
  for (int epoch = 0; epoch < 30; ++epoch) {
    TrainResult r = train_with_warm_start(loss, f.features, state, *f.train, f.validation,
                                          Schedule::one_epoch());
    EXPECT_LE(r.train_loss, previous + 1e-3) << "epoch " << epoch + 1;
    previous = r.train_loss;
    state = r.state;
  }
}

TEST(Train, ObservationIsSelfConsistent) {
  Fixture f = make_fixture(11, 15, 3, 3, 1.0);
  LinearLoss loss(vec({0.01, 0.02, 0.05, 0.3, 1.0}), f.features.names());
  TrainOptions opt;
  opt.with_gradients = true;
  TrainResult r = train_with_warm_start(loss, f.features,
                                        TrainState::zeros(f.train->num_params(), 6), *f.train,
                                        f.validation, Schedule::full_run(2), opt);
  const Vector direct = f.features.values(r.state.theta);
  EXPECT_NEAR(evaluate_loss(loss, r.observation.fv), loss.lambda().dot(direct), 1e-10);
  EXPECT_NEAR(r.train_loss, loss.lambda().dot(direct), 1e-10);
  EXPECT_EQ(r.observation.ve, logloss(r.state.theta, f.validation));
  ASSERT_TRUE(r.observation.has_gradients());
  EXPECT_NO_THROW(r.observation.validate());
}

TEST(Train, RejectsMismatchedInputs) {
  Fixture f = make_fixture(12, 10, 2, 2, 1.0);
  EXPECT_THROW(train_with_warm_start(logloss_only(3, 0), f.features,
                                     TrainState::zeros(f.train->num_params(), 0), *f.train,
                                     f.validation, Schedule::one_epoch()),
               InvalidArgument);
  EXPECT_THROW(train_with_warm_start(logloss_only(5, 4), f.features, TrainState::zeros(3, 0),
                                     *f.train, f.validation, Schedule::one_epoch()),
               InvalidArgument);
  Dataset other = blobs(99, 11, 2, 2, 1.0);
  EXPECT_THROW(train_with_warm_start(logloss_only(5, 4), f.features,
                                     TrainState::zeros(f.train->num_params(), 0), other,
                                     f.validation, Schedule::one_epoch()),
               InvalidArgument);
}

TEST(Train, DivergenceIsReported) {
  Fixture f = make_fixture(13, 10, 2, 2, 1.0);
  TrainOptions opt;
  opt.adagrad.base_learning_rate = 1e308;
  opt.adagrad.learning_rate_multiplier = 10.0;
  EXPECT_THROW(train_with_warm_start(logloss_only(5, 4), f.features,
                                     TrainState::zeros(f.train->num_params(), 0), *f.train,
                                     f.validation, Schedule::one_epoch(), opt),
               std::exception);
}

TEST(EvaluateObservation, ZeroModel) {
  Fixture f = make_fixture(14, 9, 2, 3, 1.0);
  Observation o = evaluate_observation(Vector::Zero(f.train->num_params()), f.features,
                                       f.validation, false);
  EXPECT_NEAR(o.ve, std::log(3.0), 1e-15);
  EXPECT_FALSE(o.grad_ve.has_value());
  EXPECT_FALSE(o.jacobian.has_value());
}

TEST(EvaluateObservation, JacobianMatchesFiniteDifferences) {
  Fixture f = make_fixture(15, 12, 3, 3, 1.0);
  std::mt19937_64 rng(16);
  const Vector theta = random_theta(rng, f.train->num_params());
  Observation o = evaluate_observation(theta, f.features, f.validation, true);
  for (Index j = 0; j < f.features.dimension(); ++j) {
    auto fj = [&](const Vector& t) { return f.features.values(t)(j); };
    EXPECT_TRUE(close_relative(o.jacobian->col(j),
                               oracle::finite_difference_gradient(fj, theta, 1e-5), 1e-4));
  }
  auto ve = [&](const Vector& t) { return logloss(t, f.validation); };
  EXPECT_TRUE(close_relative(*o.grad_ve, oracle::finite_difference_gradient(ve, theta, 1e-5),
                             1e-4));
}

TEST(CsvDataset, ParsesAndValidates) {
  std::istringstream in("a,b,label\n1.5,2,0\n-1,0.25,2\n\n3,4,1\n");
  Dataset d = read_csv_dataset(in);
  EXPECT_EQ(d.size(), 3);
  EXPECT_EQ(d.dim(), 2);
  EXPECT_EQ(d.classes, 3);
  EXPECT_EQ(d.y, (std::vector<int>{0, 2, 1}));
  EXPECT_DOUBLE_EQ(d.x(1, 1), 0.25);
  std::istringstream bad_label("a,label\n1,0.5\n");
  EXPECT_THROW(read_csv_dataset(bad_label), InvalidArgument);
  std::istringstream bad_cells("a,label\n1,2,3\n");
  EXPECT_THROW(read_csv_dataset(bad_cells), InvalidArgument);
  std::istringstream bad_number("a,label\nx,1\n");
  EXPECT_THROW(read_csv_dataset(bad_number), InvalidArgument);
  std::istringstream out_of_range("a,label\n1,3\n");
  EXPECT_THROW(read_csv_dataset(out_of_range, 2), InvalidArgument);
}

TEST(Standardizer, ZScoresColumns) {
  Dataset d = blobs(17, 50, 3, 2, 3.0);
  Standardizer s = Standardizer::fit(d.x);
  s.apply(d);
  for (Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(d.x.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR((d.x.col(c).array().square()).mean(), 1.0, 1e-12);
  }
  Dataset flat;
  flat.x = Matrix::Constant(4, 1, 2.0);
  Standardizer t = Standardizer::fit(flat.x);
  EXPECT_EQ(t.scale(0), 1.0);
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(18);
  TrainState s{random_theta(rng, 7), random_theta(rng, 7).cwiseAbs(), 12, 0xDEADBEEFULL};
  std::stringstream buf;
  write_checkpoint(buf, s);
  EXPECT_EQ(buf.str().size(), 16u + 2 * 7 * 8 + 16);
  TrainState t = read_checkpoint(buf);
  EXPECT_EQ(t.theta, s.theta);
  EXPECT_EQ(t.accumulators, s.accumulators);
  EXPECT_EQ(t.epoch, 12);
  EXPECT_EQ(t.seed, 0xDEADBEEFULL);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(junk), InvalidArgument);
  std::stringstream buf;
  write_checkpoint(buf, TrainState::zeros(4, 1));
  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), InvalidArgument);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), InvalidArgument);
}

}  // namespace
}  // namespace lossforge
