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

// Ground-truth engines for finite model sets.

#pragma once

#include "lossforge/learnloss.hpp"
#include "lossforge/numopt.hpp"

#include <functional>
#include <span>
#include <vector>

namespace lossforge::oracle {

struct FiniteBilevelInstance {
  std::vector<Observation> observations;
  Hypercube feasible;

  void validate() const {
    const Index k = check_observations(observations, false);
    require(feasible.dimension() == k,
            "FiniteBilevelInstance: feasible set dimension must match k");
  }
};

struct OracleResult {
  Vector lambda;
  double achieved_ve = 0.0;
  int argmin_source = 0;  // 0-based input index of the realized argmin
};

// Checks, in ascending-ve order, whether some lambda in F makes observation i
// a (non-strict) minimizer of lambda.fv by LP feasibility; the first feasible
// candidate is optimal for the finite problem.
inline OracleResult optimal_lambda_finite(const FiniteBilevelInstance& instance) {
  instance.validate();
  const auto& obs = instance.observations;
  const Index k = instance.feasible.dimension();
  const Index m = static_cast<Index>(obs.size());
  for (int candidate : sort_by_validation_error(obs)) {
    Matrix a(m - 1, k);
    Index r = 0;
    for (Index i = 0; i < m; ++i) {
      if (i == candidate) continue;
      Vector diff = obs[candidate].fv - obs[i].fv;
      const double norm = diff.cwiseAbs().maxCoeff();
      if (norm > 0.0) diff /= norm;
      a.row(r++) = diff.transpose();
    }
    auto lambda = numopt::check_lp_feasibility(a, Vector::Zero(m - 1),
                                               instance.feasible.lo(),
                                               instance.feasible.hi());
    if (lambda) return {*lambda, obs[candidate].ve, candidate};
  }
  // Unreachable for a nonempty box: some observation is always a minimizer.
  throw ComputationError("optimal_lambda_finite: no candidate was feasible");
}

// argmin_i lambda.fv_i with ties (within a relative 1e-12) broken by lowest
// ve, then by input order.
inline int realized_argmin(std::span<const Observation> observations,
                           const Vector& lambda) {
  int best = 0;
  double best_loss = lambda.dot(observations[0].fv);
  for (std::size_t i = 1; i < observations.size(); ++i) {
    const double loss = lambda.dot(observations[i].fv);
    const double tol = 1e-12 * std::max({1.0, std::abs(loss), std::abs(best_loss)});
    if (loss < best_loss - tol ||
        (std::abs(loss - best_loss) <= tol &&
         observations[i].ve < observations[best].ve)) {
      best = static_cast<int>(i);
      best_loss = std::min(loss, best_loss);
    }
  }
  return best;
}

// Exhaustive search over a uniform grid of F (pinned coordinates take their
// single value). Throws if the grid would exceed 1e7 points.
inline OracleResult brute_force_bilevel(const FiniteBilevelInstance& instance,
                                        int grid_points_per_dim) {
  instance.validate();
  require(grid_points_per_dim >= 2, "brute_force_bilevel: need >= 2 points per dim");
  const Hypercube& f = instance.feasible;
  const Index k = f.dimension();
  std::vector<int> counts(static_cast<std::size_t>(k));
  double total = 1.0;
  for (Index j = 0; j < k; ++j) {
    counts[j] = f.pinned(j) ? 1 : grid_points_per_dim;
    total *= counts[j];
  }
  require(total <= 1e7, "brute_force_bilevel: grid too large");

  OracleResult best;
  best.achieved_ve = kInfinity;
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  Vector lambda(k);
  while (true) {
    for (Index j = 0; j < k; ++j) {
      lambda(j) = counts[j] == 1
                      ? f.lo()(j)
                      : f.lo()(j) + (f.hi()(j) - f.lo()(j)) * idx[j] /
                                        (counts[j] - 1);
    }
    const int arg = realized_argmin(instance.observations, lambda);
    const double ve = instance.observations[arg].ve;
    if (ve < best.achieved_ve) {
      best = {lambda, ve, arg};
    }
    Index j = 0;
    while (j < k && ++idx[j] == counts[j]) idx[j++] = 0;
    if (j == k) break;
  }
  return best;
}

// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h.
inline Vector finite_difference_gradient(
    const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  require(h > 0.0, "finite_difference_gradient: h must be > 0");
  Vector grad(x.size());
  Vector probe = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double saved = probe(j);
    probe(j) = saved + h;
    const double up = f(probe);
    probe(j) = saved - h;
    const double down = f(probe);
    probe(j) = saved;
    grad(j) = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace lossforge::oracle
