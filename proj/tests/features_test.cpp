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

#include "lossforge/features.hpp"
#include "lossforge/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

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

std::shared_ptr<const Dataset> shared(Dataset d) {
  return std::make_shared<const Dataset>(std::move(d));
}

TEST(StandardFeatures, ZeroModelOnBalancedData) {
  auto data = shared(blobs(1, 12, 4, 3, 2.0));
  FeatureSet fs = standard_regularizer_features(data);
  ASSERT_EQ(fs.dimension(), 5);
  EXPECT_EQ(fs.primary(), 4);
  EXPECT_EQ(fs.names(), (std::vector<std::string>{"l1", "l2sq", "uniform", "dropout", "logloss"}));
  const Vector v = fs.values(Vector::Zero(data->num_params()));
  EXPECT_DOUBLE_EQ(v(0), 0.0);
  EXPECT_DOUBLE_EQ(v(1), 0.0);
  EXPECT_NEAR(v(2), std::log(3.0), 1e-15);
  EXPECT_NEAR(v(3), std::log(3.0), 1e-14);
  EXPECT_NEAR(v(4), std::log(3.0), 1e-15);
}

TEST(StandardFeatures, Norms) {
  EXPECT_DOUBLE_EQ(L1Block().values(vec({1, -2}))(0), 3.0);
  EXPECT_DOUBLE_EQ(L2SquaredBlock().values(vec({1, -2}))(0), 5.0);
  EXPECT_DOUBLE_EQ(L1Block().jacobian(vec({0, 2, -1}))(0), 0.0);
}

TEST(UniformLabelLoss, ClosedForms) {
  Dataset one;
  one.x = Matrix::Ones(1, 2);
  one.y = {0};
  one.classes = 2;
  EXPECT_NEAR(uniform_label_loss(Vector::Zero(6), one), std::log(2.0), 1e-15);
  Dataset many = blobs(2, 9, 3, 4, 1.0);
  EXPECT_NEAR(uniform_label_loss(Vector::Zero(many.num_params()), many), std::log(4.0), 1e-15);
}

TEST(UniformLabelLoss, MatchesNaiveSummation) {
  Dataset data = blobs(3, 5, 2, 3, 1.0);
  std::mt19937_64 rng(4);
  const Vector theta = random_theta(rng, data.num_params());
  double total = 0.0;
  for (Index i = 0; i < 5; ++i) {
    double z[3], mx = -kInfinity;
    for (int c = 0; c < 3; ++c) {
      z[c] = theta(6 + c);
      for (int j = 0; j < 2; ++j) z[c] += data.x(i, j) * theta(j * 3 + c);
      mx = std::max(mx, z[c]);
    }
    double s = 0.0;
    for (double zc : z) s += std::exp(zc - mx);
    for (double zc : z) total += -(zc - mx - std::log(s)) / 3.0;
  }
  EXPECT_NEAR(uniform_label_loss(theta, data), total / 5.0, 1e-12);
}

TEST(DropoutLoss, KeepAllEqualsLogloss) {
  Dataset data = blobs(5, 10, 3, 2, 1.0);
  std::mt19937_64 rng(6);
  const Vector theta = random_theta(rng, data.num_params());
  DropoutOptions opt;
  opt.keep_prob = 1.0;
  opt.num_masks = 4;
  EXPECT_EQ(dropout_loss(theta, data, opt), logloss(theta, data));
}

TEST(DropoutLoss, ZeroModelAndSeeding) {
  Dataset data = blobs(7, 10, 3, 3, 1.0);
  DropoutOptions opt;
  opt.seed = 3;
  EXPECT_NEAR(dropout_loss(Vector::Zero(data.num_params()), data, opt), std::log(3.0), 1e-14);
  std::mt19937_64 rng(8);
  const Vector theta = random_theta(rng, data.num_params());
  const double first = dropout_loss(theta, data, opt);
  EXPECT_EQ(first, dropout_loss(theta, data, opt));
  DropoutBlock block(std::make_shared<const Dataset>(data), opt);
  EXPECT_EQ(block.values(theta)(0), first);
  EXPECT_EQ(block.jacobian(theta), DropoutBlock(std::make_shared<const Dataset>(data), opt).jacobian(theta));
  opt.seed = 4;
  EXPECT_NE(dropout_loss(theta, data, opt), first);
  opt.keep_prob = 0.0;
  EXPECT_THROW(dropout_loss(theta, data, opt), InvalidArgument);
}

TEST(Pwl, Examples) {
  EXPECT_EQ(pwl_features(vec({0}), Breakpoints({0.0})), vec({0, 0}));
  EXPECT_EQ(pwl_features(vec({2}), Breakpoints({1.0})), vec({1, 0}));
  EXPECT_EQ(pwl_features(vec({-3, 2}), Breakpoints({0.0})), vec({2, 3}));
  EXPECT_THROW(Breakpoints({1.0, 1.0}), InvalidArgument);
  EXPECT_THROW(Breakpoints(std::vector<double>{}), InvalidArgument);
}

TEST(Pwl, FeaturesAreNonNegativeAndPiecewiseLinear) {
  std::mt19937_64 rng(12);
  const Breakpoints bp({-1.0, -0.2, 0.5, 1.5});
  for (int trial = 0; trial < 20; ++trial) {
    Vector theta = random_theta(rng, 7);
    const Vector f = pwl_features(theta, bp);
    EXPECT_GE(f.minCoeff(), 0.0);
    // Moving one weight within a segment changes each feature linearly.
    Vector a = theta, b = theta, mid = theta;
    a(0) = 0.6, b(0) = 1.4, mid(0) = 1.0;
    EXPECT_LE((pwl_features(mid, bp) - 0.5 * (pwl_features(a, bp) + pwl_features(b, bp)))
                  .cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pwl, LearnedRegularizerIsConvex) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Breakpoints bp({-2.0, -0.5, 0.0, 0.7, 3.0});
  for (int trial = 0; trial < 50; ++trial) {
    Vector w(10);
    for (Index i = 0; i < 10; ++i) w(i) = unit(rng);
    const Vector s = pwl_slopes(w, bp);
    for (Index i = 1; i < s.size(); ++i) EXPECT_GE(s(i), s(i - 1));
    // Slopes agree with the evaluated function between breakpoints.
    for (std::size_t a = 0; a + 1 < bp.x.size(); ++a) {
      const double x0 = bp.x[a] + 0.1, x1 = bp.x[a + 1] - 0.1;
      EXPECT_NEAR((pwl_evaluate(w, bp, x1) - pwl_evaluate(w, bp, x0)) / (x1 - x0),
                  s(static_cast<Index>(a) + 1), 1e-12);
    }
  }
}

TEST(Pwl, RightDerivativeAtBreakpoint) {
  PwlBlock block(Breakpoints({0.5}));
  const Matrix j = block.jacobian(vec({0.5}));
  EXPECT_EQ(j(0, 0), 1.0);
  EXPECT_EQ(j(0, 1), 0.0);
  Vector g = Vector::Zero(1);
  block.add_gradient(vec({0.5}), vec({2.0, 3.0}), g);
  EXPECT_EQ(g(0), 2.0);
}

TEST(SelectBreakpoints, Examples) {
  Vector w(9);
  for (int i = 0; i < 9; ++i) w(i) = 9 - i;
  EXPECT_EQ(select_breakpoints(w, 3).x, (std::vector<double>{1, 5, 9}));
  EXPECT_EQ(select_breakpoints(Vector::Constant(10, 0.25), 4).size(), 1);
  EXPECT_THROW(select_breakpoints(w, 10), InvalidArgument);
  EXPECT_THROW(select_breakpoints(w, 1), InvalidArgument);
}

TEST(SelectBreakpoints, EvenOccupancy) {
  std::mt19937_64 rng(11);
  const Vector w = random_theta(rng, 1000);
  const Breakpoints bp = select_breakpoints(w, 50);
  ASSERT_EQ(bp.size(), 50);
  // Half-open intervals [x_j, x_{j+1}), the last one closed.
  std::vector<int> counts(49, 0);
  for (Index i = 0; i < w.size(); ++i) {
    auto it = std::upper_bound(bp.x.begin(), bp.x.end(), w(i));
    const auto seg = std::min<std::ptrdiff_t>(it - bp.x.begin() - 1, 48);
    ASSERT_GE(seg, 0);
    ++counts[static_cast<std::size_t>(seg)];
  }
  for (int c : counts) EXPECT_LE(std::abs(c - 1000.0 / 49.0), 1.0) << c;
}

TEST(Mixture, Normalization) {
  EXPECT_EQ(normalize_mixture(vec({2, 2})), vec({0.5, 0.5}));
  EXPECT_THROW(normalize_mixture(vec({0, 0})), InvalidArgument);
  EXPECT_THROW(normalize_mixture(vec({1, -1})), InvalidArgument);
}

TEST(Mixture, IdenticalComponentsAreInterchangeable) {
  auto data = shared(blobs(14, 8, 2, 2, 1.0));
  FeatureSet fs = mixture_features({data, data});
  EXPECT_EQ(fs.primary(), -1);
  std::mt19937_64 rng(15);
  const Vector theta = random_theta(rng, data->num_params());
  const Vector fv = fs.values(theta);
  for (double p : {0.0, 0.3, 0.5, 1.0})
    EXPECT_NEAR(vec({p, 1 - p}).dot(fv), fv(0), 1e-12);
  EXPECT_THROW(mixture_features({data}), InvalidArgument);
}

TEST(FeatureSet, RejectsDuplicateNames) {
  std::vector<std::shared_ptr<const FeatureBlock>> blocks{std::make_shared<L1Block>(),
                                                          std::make_shared<L1Block>()};
  EXPECT_THROW(FeatureSet(blocks, 3, -1), InvalidArgument);
}

// Gradient fidelity ---------------------------------------------------------------

void expect_matches_finite_differences(const FeatureSet& fs, const Vector& theta,
                                       double rel) {
  const Matrix jac = fs.jacobian(theta);
  for (Index j = 0; j < fs.dimension(); ++j) {
    auto f = [&](const Vector& t) { return fs.values(t)(j); };
    const Vector fd = oracle::finite_difference_gradient(f, theta, 1e-5);
    EXPECT_TRUE(close_relative(jac.col(j), fd, rel)) << fs.names()[static_cast<std::size_t>(j)];
  }
}

TEST(GradientFidelity, StandardFeatures) {
  auto data = shared(blobs(20, 15, 3, 3, 1.5));
  FeatureSet fs = standard_regularizer_features(data, {0.5, 8, 2});
  std::mt19937_64 rng(21);
  for (int point = 0; point < 20; ++point)
    expect_matches_finite_differences(fs, random_theta(rng, data->num_params()), 1e-4);
}

TEST(GradientFidelity, PwlAwayFromKinks) {
  const Breakpoints bp({-1.0, -0.3, 0.0, 0.4, 1.2});
  std::mt19937_64 rng(22);
  auto data = shared(blobs(23, 10, 3, 2, 1.0));
  FeatureSet fs = pwl_regularizer_features(data, bp);
  for (int point = 0; point < 20; ++point) {
    Vector theta = random_theta(rng, data->num_params());
    for (Index i = 0; i < theta.size(); ++i)
      for (double a : bp.x)
        if (std::abs(theta(i) - a) < 1e-3) theta(i) = a + 2e-3;
    expect_matches_finite_differences(fs, theta, 1e-4);
  }
}

TEST(GradientFidelity, FusedGradientMatchesJacobian) {
  auto data = shared(blobs(24, 12, 3, 3, 1.0));
  const Breakpoints bp({-0.5, 0.1, 0.8});
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const FeatureSet& fs :
       {standard_regularizer_features(data), pwl_regularizer_features(data, bp)}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Vector theta = random_theta(rng, data->num_params());
      Vector lambda(fs.dimension());
      for (Index j = 0; j < lambda.size(); ++j) lambda(j) = unit(rng);
      EXPECT_TRUE(close_relative(fs.gradient(theta, lambda), fs.jacobian(theta) * lambda, 1e-12));
    }
  }
}

TEST(GradientFidelity, ExampleGradientsAverageToFullGradient) {
  auto data = shared(blobs(26, 9, 2, 3, 1.0));
  std::vector<std::shared_ptr<const FeatureBlock>> blocks{
      std::make_shared<L1Block>(), std::make_shared<L2SquaredBlock>(),
      std::make_shared<UniformLabelBlock>(data), std::make_shared<LogLossBlock>(data)};
  FeatureSet fs(blocks, data->num_params(), 3);
  std::mt19937_64 rng(27);
  const Vector theta = random_theta(rng, data->num_params());
  const Vector lambda = vec({0.3, 0.2, 0.7, 1.0});
  Vector avg = Vector::Zero(theta.size());
  for (Index i = 0; i < data->size(); ++i) {
    Vector g = Vector::Zero(theta.size());
    fs.add_example_gradient(theta, i, rng, lambda, g);
    avg += g / static_cast<double>(data->size());
  }
  EXPECT_TRUE(close_relative(avg, fs.gradient(theta, lambda), 1e-12));
}

}  // namespace
}  // namespace lossforge
