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

// Learning a linear loss from observed models.
//
// Observations are sorted by validation error. For each candidate argmin i*
// in that order we solve a convex QP over (lambda, alpha):
//
//   minimize   sum_i (lambda.fv_i - alpha ve_i)^2
//              + eps sum_i |J_i lambda - alpha g_i|^2
//   subject to lambda.fv_{i*} <= lambda.fv_i   for all i
//              lambda in F,  alpha >= alpha_min
//
// and return the solution of the first feasible one.

#pragma once

#include "lossforge/losscore.hpp"
#include "lossforge/numopt.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace lossforge {

struct LearnLossResult {
  Vector lambda;
  double alpha = 0.0;
  // 1-based position of the chosen argmin in ascending-ve order.
  int argmin_index = 0;
  // 0-based input position of that observation.
  int argmin_source = 0;
  double cost_value = 0.0;
  int qp_attempts = 0;
};

// sum_i |g_i|^2 / sum_i |J_i|_F^2, or 0 when the denominator vanishes.
inline double default_epsilon(std::span<const Observation> observations) {
  check_observations(observations, true);
  double num = 0.0, den = 0.0;
  for (const Observation& obs : observations) {
    num += obs.grad_ve->squaredNorm();
    den += obs.jacobian->squaredNorm();
  }
  return den > 0.0 ? num / den : 0.0;
}

// Ascending-ve order, ties kept in input order.
inline std::vector<int> sort_by_validation_error(
    std::span<const Observation> observations) {
  std::vector<int> order(observations.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return observations[a].ve < observations[b].ve;
  });
  return order;
}

// Rank of the homogeneous system whose null space holds every zero-cost
// (lambda, -alpha): rows fv_i ++ (-ve_i), plus rows of [J_i, -g_i] when
// gradients are used. A zero-cost solution is unique up to scale iff the
// rank equals k.
inline Index identifiability_rank(std::span<const Observation> observations,
                                  bool use_gradients) {
  const Index k = check_observations(observations, use_gradients);
  Index rows = static_cast<Index>(observations.size());
  if (use_gradients)
    for (const Observation& obs : observations) rows += obs.grad_ve->size();
  Matrix stacked(rows, k + 1);
  Index r = 0;
  for (const Observation& obs : observations) {
    stacked.block(r, 0, 1, k) = obs.fv.transpose();
    stacked(r, k) = -obs.ve;
    ++r;
  }
  if (use_gradients) {
    for (const Observation& obs : observations) {
      const Index n = obs.grad_ve->size();
      stacked.block(r, 0, n, k) = *obs.jacobian;
      stacked.block(r, k, n, 1) = -*obs.grad_ve;
      r += n;
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(stacked);
  qr.setThreshold(1e-10);
  return qr.rank();
}

namespace detail {

// Quadratic term over x = (lambda, alpha), normalized to unit max entry.
inline Matrix learnloss_hessian(std::span<const Observation> observations,
                                double epsilon) {
  const Index k = observations.front().num_features();
  Matrix p = Matrix::Zero(k + 1, k + 1);
  Vector row(k + 1);
  for (const Observation& obs : observations) {
    row << obs.fv, -obs.ve;
    p.noalias() += row * row.transpose();
    if (epsilon > 0.0) {
      const Index n = obs.grad_ve->size();
      Matrix g(n, k + 1);
      g << *obs.jacobian, -*obs.grad_ve;
      p.noalias() += epsilon * (g.transpose() * g);
    }
  }
  p = (p + p.transpose()).eval();  // 2x the Gram matrix, exactly symmetric
  const double scale = p.cwiseAbs().maxCoeff();
  if (scale > 0.0) p /= scale;
  return p;
}

}  // namespace detail

// Builds the QP for candidate argmin `candidate` (0-based input index).
inline numopt::QpProblem build_learnloss_qp(
    std::span<const Observation> observations, int candidate,
    const Hypercube& feasible, const CostParams& params) {
  const Index k = observations.front().num_features();
  const Index m = static_cast<Index>(observations.size());
  Matrix p = detail::learnloss_hessian(observations, params.epsilon);
  Matrix a = Matrix::Zero(m - 1, k + 1);
  Index r = 0;
  const Vector& best = observations[candidate].fv;
  for (Index i = 0; i < m; ++i) {
    if (i == candidate) continue;
    Vector diff = best - observations[i].fv;
    const double norm = diff.cwiseAbs().maxCoeff();
    if (norm > 0.0) diff /= norm;
    a.block(r, 0, 1, k) = diff.transpose();
    ++r;
  }
  Vector lo(k + 1), hi(k + 1);
  lo << feasible.lo(), params.alpha_min;
  hi << feasible.hi(), kInfinity;
  return numopt::QpProblem(std::move(p), Vector::Zero(k + 1), std::move(a),
                           Vector::Zero(m - 1), std::move(lo), std::move(hi));
}

inline LearnLossResult learn_loss(std::span<const Observation> observations,
                                  const Hypercube& feasible,
                                  const CostParams& params,
                                  const numopt::QpSettings& settings = {}) {
  params.validate();
  const bool gradient_term = params.epsilon > 0.0;
  const Index k = check_observations(observations, gradient_term);
  require(feasible.dimension() == k,
          "learn_loss: feasible set dimension must match feature count");

  const std::vector<int> order = sort_by_validation_error(observations);
  LearnLossResult result;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const int candidate = order[pos];
    result.qp_attempts = static_cast<int>(pos) + 1;
    numopt::QpProblem qp =
        build_learnloss_qp(observations, candidate, feasible, params);
    // Feasibility is decided by the phase-1 LP over lambda alone; the
    // constraints do not involve alpha.
    if (!numopt::check_lp_feasibility(qp.constraints().leftCols(k), qp.bounds(),
                                      feasible.lo(), feasible.hi(), settings))
      continue;
    numopt::QpSolution sol = numopt::solve_qp(qp, settings);
    if (sol.status != numopt::QpStatus::kOptimal)
      throw ComputationError(
          "learn_loss: QP for candidate argmin " + std::to_string(pos + 1) +
          " did not converge (" + std::string(numopt::to_string(sol.status)) + ")");
    // Without gradient rows the cost has rank at most m and is often badly
    // conditioned. Proximal passes recenter the Tikhonov term at the last
    // solution to remove its bias.
    for (int pass = 0; pass < 5 && !gradient_term && settings.tikhonov > 0.0; ++pass) {
      numopt::QpProblem shifted(qp.quadratic(), qp.linear() - 2.0 * settings.tikhonov * sol.x,
                                qp.constraints(), qp.bounds(), qp.lower(), qp.upper());
      numopt::QpSolution next = numopt::solve_qp(shifted, settings);
      if (!next.optimal()) break;
      const double moved = (next.x - sol.x).cwiseAbs().maxCoeff();
      sol = std::move(next);
      if (moved <= 1e-10 * (1.0 + sol.x.cwiseAbs().maxCoeff())) break;
    }
    result.lambda = feasible.clamp(sol.x.head(k));
    result.alpha = std::max(sol.x(k), params.alpha_min);
    result.argmin_index = static_cast<int>(pos) + 1;
    result.argmin_source = candidate;
    result.cost_value = cost(result.lambda, result.alpha, observations, params);
    return result;
  }
  throw ComputationError("learn_loss: feasible set excludes every argmin");
}

inline nlohmann::json to_json(const LearnLossResult& r) {
  nlohmann::json j;
  j["lambda"] = detail::to_json_array(r.lambda);
  j["alpha"] = r.alpha;
  j["argmin_index"] = r.argmin_index;
  j["cost"] = r.cost_value;
  j["qp_attempts"] = r.qp_attempts;
  return j;
}

}  // namespace lossforge
