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

// Slow, independent reference solvers used only by the tests. Nothing here
// shares code with the production QP path.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace lossforge::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Stacks A x <= b and finite box bounds into G x <= h.
inline void stack_inequalities(const MatrixXd& a, const VectorXd& b,
                               const VectorXd& lo, const VectorXd& hi,
                               MatrixXd& g, VectorXd& h) {
  const Eigen::Index d = lo.size();
  std::vector<std::pair<VectorXd, double>> rows;
  for (Eigen::Index i = 0; i < a.rows(); ++i) rows.emplace_back(a.row(i).transpose(), b(i));
  for (Eigen::Index j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(d);
    if (std::isfinite(hi(j))) {
      e(j) = 1.0;
      rows.emplace_back(e, hi(j));
    }
    if (std::isfinite(lo(j))) {
      e(j) = -1.0;
      rows.emplace_back(e, -lo(j));
    }
  }
  g.resize(static_cast<Eigen::Index>(rows.size()), d);
  h.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    g.row(static_cast<Eigen::Index>(i)) = rows[i].first.transpose();
    h(static_cast<Eigen::Index>(i)) = rows[i].second;
  }
}

// Minimizes 1/2 x'Hx + q'x s.t. A x <= b, lo <= x <= hi for positive definite
// H. Method of multipliers on A x <= b; each subproblem is box-constrained
// and strongly convex, and is solved by accelerated projected gradient
// (projection = clamp onto the box) with gradient restarts. The penalty grows
// tenfold whenever an outer step fails to cut the violation by 4x.
inline VectorXd projected_gradient_qp(const MatrixXd& hess, const VectorXd& q,
                                      const MatrixXd& a, const VectorXd& b,
                                      const VectorXd& lo, const VectorXd& hi,
                                      double tol = 1e-12) {
  const Eigen::Index d = q.size();
  const Eigen::Index c = a.rows();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(hess, Eigen::EigenvaluesOnly);
  const double mu_min = es.eigenvalues().minCoeff();
  const double hess_max = es.eigenvalues().maxCoeff();
  double ata_max = 0.0;
  if (c > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> ea(a.transpose() * a,
                                               Eigen::EigenvaluesOnly);
    ata_max = ea.eigenvalues().maxCoeff();
  }
  double rho = 10.0;
  auto project = [&](VectorXd v) {
    return VectorXd(v.cwiseMax(lo).cwiseMin(hi));
  };
  auto gradient = [&](const VectorXd& x, const VectorXd& y) {
    VectorXd g = hess * x + q;
    if (c > 0) g += a.transpose() * (y + rho * (a * x - b)).cwiseMax(0.0);
    return g;
  };
  auto violation = [&](const VectorXd& x) {
    return c > 0 ? std::max(0.0, (a * x - b).maxCoeff()) : 0.0;
  };
  VectorXd x = project(VectorXd::Zero(d));
  VectorXd y = VectorXd::Zero(c);
  double last_violation = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < 400; ++outer) {
    const double lip = hess_max + rho * ata_max;
    const double step = 1.0 / lip;
    const double momentum =
        (std::sqrt(lip) - std::sqrt(mu_min)) / (std::sqrt(lip) + std::sqrt(mu_min));
    VectorXd prev = x, extrap = x;
    for (int inner = 0; inner < 200000; ++inner) {
      VectorXd next = project(extrap - step * gradient(extrap, y));
      if ((next - x).dot(extrap - next) > 0.0) {
        extrap = x;  // restart
        continue;
      }
      extrap = next + momentum * (next - x);
      const double moved = (next - x).cwiseAbs().maxCoeff();
      x = next;
      if (moved <= 1e-3 * tol) break;
    }
    const VectorXd y_next = c > 0 ? VectorXd((y + rho * (a * x - b)).cwiseMax(0.0))
                                  : VectorXd(0);
    const double dy = c > 0 ? (y_next - y).cwiseAbs().maxCoeff() : 0.0;
    y = y_next;
    if (dy <= rho * tol && (x - prev).cwiseAbs().maxCoeff() <= tol) break;
    const double v = violation(x);
    if (v > 0.25 * last_violation && rho < 1e8) rho *= 10.0;
    last_violation = v;
  }
  return x;
}

inline void for_each_subset(int n, int k, const std::function<bool(const std::vector<int>&)>& fn) {
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    if (!fn(idx)) return;
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

// Feasibility of a bounded polyhedron {x : G x <= h} by enumerating every
// vertex candidate (d tight rows solved exactly). A nonempty bounded
// polyhedron has at least one vertex.
inline bool vertex_enumeration_feasible(const MatrixXd& g, const VectorXd& h,
                                        double tol = 1e-9) {
  const int d = static_cast<int>(g.cols());
  const int n = static_cast<int>(g.rows());
  if (n < d) return false;
  bool found = false;
  for_each_subset(n, d, [&](const std::vector<int>& rows) {
    MatrixXd sub(d, d);
    VectorXd rhs(d);
    for (int k = 0; k < d; ++k) {
      sub.row(k) = g.row(rows[k]);
      rhs(k) = h(rows[k]);
    }
    Eigen::FullPivLU<MatrixXd> lu(sub);
    if (lu.rank() < d) return true;
    const VectorXd x = lu.solve(rhs);
    if ((g * x - h).maxCoeff() <= tol * (1.0 + x.cwiseAbs().maxCoeff())) {
      found = true;
      return false;
    }
    return true;
  });
  return found;
}

// Random symmetric positive definite matrix with eigenvalues >= floor.
inline MatrixXd random_spd(std::mt19937_64& rng, int d, double floor) {
  std::normal_distribution<double> normal;
  MatrixXd b(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) b(i, j) = normal(rng);
  return b.transpose() * b / d + floor * MatrixXd::Identity(d, d);
}


struct RandomQp {
  MatrixXd p;
  VectorXd q;
  MatrixXd a;
  VectorXd b;
  VectorXd lo;
  VectorXd hi;
};

// Random feasible convex QP: strictly convex P, inequalities satisfied with
// positive slack at a random interior point, and a finite or half-open box.
inline RandomQp random_feasible_qp(std::mt19937_64& rng, int d, int c) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RandomQp r;
  r.p = random_spd(rng, d, 0.2);
  r.q.resize(d);
  for (int j = 0; j < d; ++j) r.q(j) = 3.0 * normal(rng);
  VectorXd x0(d);
  for (int j = 0; j < d; ++j) x0(j) = 0.5 * normal(rng);
  r.a.resize(c, d);
  r.b.resize(c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < d; ++j) r.a(i, j) = normal(rng);
    r.b(i) = r.a.row(i).dot(x0) + 0.5 * unit(rng);
  }
  r.lo.resize(d);
  r.hi.resize(d);
  for (int j = 0; j < d; ++j) {
    const double kind = unit(rng);
    r.lo(j) = x0(j) - 0.1 - unit(rng);
    r.hi(j) = x0(j) + 0.1 + unit(rng);
    if (kind < 0.15) r.lo(j) = -std::numeric_limits<double>::infinity();
    else if (kind < 0.3) r.hi(j) = std::numeric_limits<double>::infinity();
  }
  return r;
}

}  // namespace lossforge::testing
