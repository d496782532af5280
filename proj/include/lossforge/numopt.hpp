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

// Dense convex quadratic programming.
//
// Solves
//
//   minimize    1/2 x'Px + q'x + delta |x|^2
//   subject to  A x <= b,  lo <= x <= hi
//
// with an operator-splitting (ADMM) iteration on a Ruiz-equilibrated copy of
// the problem, followed by an active-set polish that solves the KKT system of
// the guessed active set directly. The Tikhonov term delta (default 1e-9) is
// always present and is part of the solver contract: it makes the minimizer
// unique when P is singular. Reported residuals refer to the regularized
// problem; the reported objective omits the delta term.

#pragma once

#include "lossforge/common.hpp"

#include <algorithm>
#include <optional>
#include <string_view>
#include <vector>

namespace lossforge::numopt {

enum class QpStatus { kOptimal, kInfeasible, kMaxIterations };

inline std::string_view to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct QpSettings {
  int max_iterations = 20000;
  double tikhonov = 1e-9;
  // Absolute KKT tolerance (infinity norm, unscaled) required for kOptimal.
  double kkt_tolerance = 1e-8;
  // ADMM stopping tolerance before the polish is attempted.
  double admm_tolerance = 1e-7;
  double sigma = 1e-6;
  double relaxation = 1.6;
  double rho = 0.1;
  int scaling_iterations = 10;
  // Infeasibility rule: the scaled primal residual stays above
  // stagnation_floor without improving for stagnation_window iterations,
  // and the normalized Farkas certificate residual is below
  // certificate_tolerance.
  int stagnation_window = 500;
  double stagnation_floor = 1e-6;
  double certificate_tolerance = 1e-8;
  int max_polish_rounds = 60;
};

class QpProblem {
 public:
  QpProblem(Matrix quadratic, Vector linear, Matrix constraints, Vector bounds,
            Vector lower, Vector upper)
      : quadratic_(std::move(quadratic)),
        linear_(std::move(linear)),
        constraints_(std::move(constraints)),
        bounds_(std::move(bounds)),
        lower_(std::move(lower)),
        upper_(std::move(upper)) {
    validate();
  }

  // Box-constrained problem with no general inequalities.
  static QpProblem box_constrained(Matrix quadratic, Vector linear,
                                   Vector lower, Vector upper) {
    const Index d = linear.size();
    return QpProblem(std::move(quadratic), std::move(linear), Matrix(0, d),
                     Vector(0), std::move(lower), std::move(upper));
  }

  Index dimension() const { return linear_.size(); }
  Index num_constraints() const { return constraints_.rows(); }

  const Matrix& quadratic() const { return quadratic_; }
  const Vector& linear() const { return linear_; }
  const Matrix& constraints() const { return constraints_; }
  const Vector& bounds() const { return bounds_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

  // 1/2 x'Px + q'x (without the Tikhonov term).
  double objective(const Vector& x) const {
    return 0.5 * x.dot(quadratic_ * x) + linear_.dot(x);
  }

  // Same problem with inequality row `row` removed.
  QpProblem without_constraint(Index row) const {
    require(row >= 0 && row < num_constraints(), "constraint row out of range");
    const Index c = num_constraints();
    Matrix a(c - 1, dimension());
    Vector b(c - 1);
    for (Index i = 0, k = 0; i < c; ++i) {
      if (i == row) continue;
      a.row(k) = constraints_.row(i);
      b(k) = bounds_(i);
      ++k;
    }
    return QpProblem(quadratic_, linear_, std::move(a), std::move(b), lower_,
                     upper_);
  }

 private:
  void validate() {
    const Index d = linear_.size();
    require(quadratic_.rows() == d && quadratic_.cols() == d,
            "QpProblem: P must be d x d");
    require(constraints_.cols() == d || constraints_.rows() == 0,
            "QpProblem: A must have d columns");
    if (constraints_.rows() == 0) constraints_.resize(0, d);
    require(bounds_.size() == constraints_.rows(),
            "QpProblem: b must have one entry per row of A");
    require(lower_.size() == d && upper_.size() == d,
            "QpProblem: box bounds must have length d");
    require(quadratic_.allFinite() && linear_.allFinite(),
            "QpProblem: P and q must be finite");
    require(constraints_.allFinite() && bounds_.allFinite(),
            "QpProblem: A and b must be finite");
    for (Index j = 0; j < d; ++j) {
      require(!std::isnan(lower_(j)) && !std::isnan(upper_(j)),
              "QpProblem: NaN box bound");
      require(lower_(j) <= upper_(j), "QpProblem: lo must not exceed hi");
      require(lower_(j) < kInfinity && upper_(j) > -kInfinity,
              "QpProblem: box bound excludes every point");
    }
    if (d == 0) return;
    const double scale = std::max(1.0, quadratic_.cwiseAbs().maxCoeff());
    const double asym = (quadratic_ - quadratic_.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-12 * scale, "QpProblem: P is not symmetric");
    quadratic_ = 0.5 * (quadratic_ + quadratic_.transpose()).eval();
    // Cholesky probe: P + tau*I is positive definite iff min eig(P) > -tau.
    const double tau = 1e-9 * scale;
    Eigen::LLT<Matrix> probe(quadratic_ +
                             tau * Matrix::Identity(d, d));
    require(probe.info() == Eigen::Success,
            "QpProblem: P is not positive semidefinite");
  }

  Matrix quadratic_;
  Vector linear_;
  Matrix constraints_;
  Vector bounds_;
  Vector lower_;
  Vector upper_;
};

struct QpSolution {
  Vector x;
  QpStatus status = QpStatus::kMaxIterations;
  // max violation of A x <= b and of the box.
  double primal_residual = kInfinity;
  // |(P + 2 delta I) x + q + A'mu + nu|_inf.
  double dual_residual = kInfinity;
  // max |mu_i (A x - b)_i| and the analogous box terms.
  double complementarity = kInfinity;
  double objective = kInfinity;
  // mu >= 0, one per row of A.
  Vector inequality_multipliers;
  // nu_j > 0 at an active upper bound, nu_j < 0 at an active lower bound.
  Vector box_multipliers;
  int iterations = 0;
  bool polished = false;

  bool optimal() const { return status == QpStatus::kOptimal; }
};

namespace detail {

// Problem after substituting out pinned variables and dropping zero rows.
// Constraint rows are the kept rows of A (l = -inf) followed by one row per
// free variable with at least one finite box bound.
struct ReducedProblem {
  std::vector<Index> free_vars;
  Vector fixed_x;  // full length; pinned values, zero elsewhere
  Matrix hessian;
  Vector linear;
  Matrix rows;
  Vector lower;
  Vector upper;
  std::vector<Index> a_row_source;  // original A row of each leading row
  Index num_a_rows = 0;
  bool infeasible = false;  // a zero row with negative right-hand side
};

inline ReducedProblem reduce(const QpProblem& problem, double tikhonov) {
  const Index d = problem.dimension();
  const Matrix& p = problem.quadratic();
  const Matrix& a = problem.constraints();
  ReducedProblem r;
  r.fixed_x = Vector::Zero(d);
  std::vector<Index> pinned;
  for (Index j = 0; j < d; ++j) {
    if (problem.lower()(j) == problem.upper()(j)) {
      pinned.push_back(j);
      r.fixed_x(j) = problem.lower()(j);
    } else {
      r.free_vars.push_back(j);
    }
  }
  const Index nf = static_cast<Index>(r.free_vars.size());
  r.hessian.resize(nf, nf);
  r.linear.resize(nf);
  for (Index s = 0; s < nf; ++s) {
    const Index js = r.free_vars[s];
    for (Index t = 0; t < nf; ++t) r.hessian(s, t) = p(js, r.free_vars[t]);
    r.hessian(s, s) += 2.0 * tikhonov;
    double lin = problem.linear()(js);
    for (Index jp : pinned) lin += p(js, jp) * r.fixed_x(jp);
    r.linear(s) = lin;
  }

  std::vector<Index> kept;
  std::vector<double> kept_b;
  for (Index i = 0; i < a.rows(); ++i) {
    double rhs = problem.bounds()(i);
    double row_norm = 0.0;
    for (Index jp : pinned) rhs -= a(i, jp) * r.fixed_x(jp);
    for (Index j : r.free_vars) row_norm = std::max(row_norm, std::abs(a(i, j)));
    if (row_norm == 0.0) {
      const double scale = std::max(1.0, std::abs(problem.bounds()(i)));
      if (rhs < -1e-12 * scale) r.infeasible = true;
      continue;
    }
    kept.push_back(i);
    kept_b.push_back(rhs);
  }
  std::vector<Index> boxed;
  for (Index s = 0; s < nf; ++s) {
    const Index j = r.free_vars[s];
    if (std::isfinite(problem.lower()(j)) || std::isfinite(problem.upper()(j)))
      boxed.push_back(s);
  }
  r.num_a_rows = static_cast<Index>(kept.size());
  const Index m = r.num_a_rows + static_cast<Index>(boxed.size());
  r.rows = Matrix::Zero(m, nf);
  r.lower.resize(m);
  r.upper.resize(m);
  for (Index k = 0; k < r.num_a_rows; ++k) {
    for (Index s = 0; s < nf; ++s) r.rows(k, s) = a(kept[k], r.free_vars[s]);
    r.lower(k) = -kInfinity;
    r.upper(k) = kept_b[k];
  }
  r.a_row_source = kept;
  for (std::size_t t = 0; t < boxed.size(); ++t) {
    const Index k = r.num_a_rows + static_cast<Index>(t);
    const Index s = boxed[t];
    r.rows(k, s) = 1.0;
    r.lower(k) = problem.lower()(r.free_vars[s]);
    r.upper(k) = problem.upper()(r.free_vars[s]);
  }
  return r;
}

// Active-set tags per constraint row.
enum class Side : signed char { kLower = -1, kInactive = 0, kUpper = 1 };

struct PolishResult {
  Vector x;
  Vector y;  // one multiplier per reduced row, signed like Side
  std::vector<Side> active;
  bool success = false;
};

// Solves the equality-constrained KKT system for a fixed active set, then
// adjusts the set until primal feasibility and multiplier signs hold.
inline PolishResult polish(const ReducedProblem& r, std::vector<Side> active,
                           int max_rounds) {
  const Index n = r.hessian.rows();
  const Index m = r.rows.rows();
  PolishResult out;
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<Index> act;
    for (Index i = 0; i < m; ++i)
      if (active[i] != Side::kInactive) act.push_back(i);
    const Index na = static_cast<Index>(act.size());
    Matrix kkt = Matrix::Zero(n + na, n + na);
    Vector rhs(n + na);
    kkt.topLeftCorner(n, n) = r.hessian;
    rhs.head(n) = -r.linear;
    for (Index k = 0; k < na; ++k) {
      const Index i = act[k];
      kkt.block(n + k, 0, 1, n) = r.rows.row(i);
      kkt.block(0, n + k, n, 1) = r.rows.row(i).transpose();
      rhs(n + k) = active[i] == Side::kUpper ? r.upper(i) : r.lower(i);
    }
    // LU is tried first; dependent active rows make the KKT matrix singular
    // and fall back to a rank-revealing solve.
    Vector sol;
    bool solved = false;
    const double kkt_scale = 1.0 + kkt.cwiseAbs().maxCoeff();
    {
      Eigen::PartialPivLU<Matrix> lu(kkt);
      sol = lu.solve(rhs);
      for (int refine = 0; refine < 2 && sol.allFinite(); ++refine) sol += lu.solve(rhs - kkt * sol);
      solved = sol.allFinite() &&
               (rhs - kkt * sol).cwiseAbs().maxCoeff() <=
                   1e-12 * kkt_scale * (1.0 + sol.cwiseAbs().maxCoeff());
    }
    if (!solved) {
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(kkt);
      sol = cod.solve(rhs);
      for (int refine = 0; refine < 2; ++refine) {
        const Vector res = rhs - kkt * sol;
        sol += cod.solve(res);
      }
    }
    Vector x = sol.head(n);
    Vector y = Vector::Zero(m);
    for (Index k = 0; k < na; ++k) y(act[k]) = sol(n + k);

    // Multiplier sign violations: upper rows need y >= 0, lower rows y <= 0.
    double worst_sign = 0.0;
    Index worst_sign_row = -1;
    const double y_scale = 1.0 + (na ? y.cwiseAbs().maxCoeff() : 0.0);
    for (Index i : act) {
      const double signed_y = active[i] == Side::kUpper ? y(i) : -y(i);
      if (signed_y < -1e-12 * y_scale && signed_y < worst_sign) {
        worst_sign = signed_y;
        worst_sign_row = i;
      }
    }
    // Primal violations among inactive rows.
    double worst_violation = 0.0;
    Index worst_violation_row = -1;
    Side worst_violation_side = Side::kInactive;
    for (Index i = 0; i < m; ++i) {
      if (active[i] != Side::kInactive) continue;
      const double ax = r.rows.row(i).dot(x);
      const double tol = 1e-11 * (1.0 + std::abs(ax));
      if (ax - r.upper(i) > tol && ax - r.upper(i) > worst_violation) {
        worst_violation = ax - r.upper(i);
        worst_violation_row = i;
        worst_violation_side = Side::kUpper;
      }
      if (r.lower(i) - ax > tol && r.lower(i) - ax > worst_violation) {
        worst_violation = r.lower(i) - ax;
        worst_violation_row = i;
        worst_violation_side = Side::kLower;
      }
    }
    if (worst_sign_row < 0 && worst_violation_row < 0) {
      out.x = std::move(x);
      out.y = std::move(y);
      out.active = std::move(active);
      out.success = true;
      return out;
    }
    // Early rounds repair every defect at once; later rounds change one row
    // at a time to avoid cycling.
    if (round < 4) {
      for (Index i : act) {
        const double signed_y = active[i] == Side::kUpper ? y(i) : -y(i);
        if (signed_y < -1e-12 * y_scale) active[i] = Side::kInactive;
      }
      for (Index i = 0; i < m; ++i) {
        if (std::find(act.begin(), act.end(), i) != act.end()) continue;
        const double ax = r.rows.row(i).dot(x);
        const double tol = 1e-11 * (1.0 + std::abs(ax));
        if (ax - r.upper(i) > tol) active[i] = Side::kUpper;
        else if (r.lower(i) - ax > tol) active[i] = Side::kLower;
      }
    } else if (worst_sign_row >= 0) {
      active[worst_sign_row] = Side::kInactive;
    } else {
      active[worst_violation_row] = worst_violation_side;
    }
  }
  return out;
}

struct Scaling {
  Vector var;   // D
  Vector row;   // E
  double cost = 1.0;
};

inline double clip_norm(double v) {
  if (v < 1e-4) return 1.0;
  return std::min(v, 1e4);
}

// Ruiz equilibration of [H C'; C 0] followed by cost scaling.
inline Scaling equilibrate(const ReducedProblem& r, Matrix& h, Vector& q,
                           Matrix& c, Vector& l, Vector& u, int iterations) {
  const Index n = r.hessian.rows();
  const Index m = r.rows.rows();
  Scaling s{Vector::Ones(n), Vector::Ones(m), 1.0};
  h = r.hessian;
  c = r.rows;
  for (int it = 0; it < iterations; ++it) {
    Vector dv(n), ev(m);
    for (Index j = 0; j < n; ++j) {
      double norm = h.col(j).cwiseAbs().maxCoeff();
      if (m > 0) norm = std::max(norm, c.col(j).cwiseAbs().maxCoeff());
      dv(j) = 1.0 / std::sqrt(clip_norm(norm));
    }
    for (Index i = 0; i < m; ++i)
      ev(i) = 1.0 / std::sqrt(clip_norm(c.row(i).cwiseAbs().maxCoeff()));
    h = dv.asDiagonal() * h * dv.asDiagonal();
    c = ev.asDiagonal() * c * dv.asDiagonal();
    s.var.array() *= dv.array();
    s.row.array() *= ev.array();
  }
  q = s.var.cwiseProduct(r.linear);
  double mean_col = 0.0;
  for (Index j = 0; j < n; ++j) mean_col += h.col(j).cwiseAbs().maxCoeff();
  mean_col = n > 0 ? mean_col / static_cast<double>(n) : 1.0;
  const double qn = n > 0 ? q.cwiseAbs().maxCoeff() : 0.0;
  s.cost = 1.0 / clip_norm(std::max(mean_col, qn));
  h *= s.cost;
  q *= s.cost;
  l = s.row.cwiseProduct(r.lower);
  u = s.row.cwiseProduct(r.upper);
  return s;
}

// Full-dimension residual report for a candidate (x, mu). Box multipliers are
// the sign-consistent values closing the stationarity gap at active bounds.
inline void report(const QpProblem& problem, double tikhonov, const Vector& x,
                   const Vector& mu, QpSolution& sol) {
  const Index d = problem.dimension();
  const Matrix& a = problem.constraints();
  sol.x = x;
  sol.inequality_multipliers = mu;
  Vector ax = a * x;
  double primal = 0.0;
  double comp = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    const double slack = ax(i) - problem.bounds()(i);
    primal = std::max(primal, slack);
    comp = std::max(comp, std::abs(mu(i) * slack));
  }
  Vector grad = problem.quadratic() * x + problem.linear() + 2.0 * tikhonov * x;
  if (a.rows() > 0) grad += a.transpose() * mu;
  sol.box_multipliers = Vector::Zero(d);
  for (Index j = 0; j < d; ++j) {
    const double lo = problem.lower()(j);
    const double hi = problem.upper()(j);
    primal = std::max({primal, lo - x(j), x(j) - hi});
    const double want = -grad(j);
    double nu = 0.0;
    if (lo == hi) {
      nu = want;
    } else if (x(j) == hi && want > 0.0) {
      nu = want;
    } else if (x(j) == lo && want < 0.0) {
      nu = want;
    }
    sol.box_multipliers(j) = nu;
    if (nu > 0.0) comp = std::max(comp, std::abs(nu * (x(j) - hi)));
    if (nu < 0.0) comp = std::max(comp, std::abs(nu * (x(j) - lo)));
  }
  sol.primal_residual = primal;
  sol.dual_residual = d > 0 ? (grad + sol.box_multipliers).cwiseAbs().maxCoeff() : 0.0;
  sol.complementarity = comp;
  sol.objective = problem.objective(x);
}

inline bool meets_tolerance(const QpSolution& s, double tol) {
  return s.primal_residual <= tol && s.dual_residual <= tol &&
         s.complementarity <= tol;
}

// Lifts a reduced polish result to the original problem and reports it.
inline QpSolution lift(const QpProblem& problem, const ReducedProblem& r,
                       const Vector& xr, const Vector& yr,
                       const std::vector<Side>* active, double tikhonov) {
  Vector x = r.fixed_x;
  for (std::size_t s = 0; s < r.free_vars.size(); ++s)
    x(r.free_vars[s]) = xr(static_cast<Index>(s));
  // Snap active box rows exactly onto their bounds and clip tiny overshoot.
  for (Index k = r.num_a_rows; k < r.rows.rows(); ++k) {
    Index s = 0;
    r.rows.row(k).cwiseAbs().maxCoeff(&s);
    const Index j = r.free_vars[s];
    if (active && (*active)[k] == Side::kUpper) x(j) = r.upper(k);
    else if (active && (*active)[k] == Side::kLower) x(j) = r.lower(k);
  }
  for (Index j = 0; j < x.size(); ++j) {
    const double lo = problem.lower()(j), hi = problem.upper()(j);
    if (x(j) < lo && lo - x(j) <= 1e-9) x(j) = lo;
    if (x(j) > hi && x(j) - hi <= 1e-9) x(j) = hi;
  }
  Vector mu = Vector::Zero(problem.num_constraints());
  for (Index k = 0; k < r.num_a_rows; ++k)
    mu(r.a_row_source[k]) = std::max(0.0, yr(k));
  QpSolution sol;
  report(problem, tikhonov, x, mu, sol);
  return sol;
}

}  // namespace detail

namespace detail {

inline QpSolution solve_qp_once(const QpProblem& problem, const QpSettings& settings) {
  using detail::Side;
  const detail::ReducedProblem r = detail::reduce(problem, settings.tikhonov);
  const Index n = r.hessian.rows();
  const Index m = r.rows.rows();

  if (r.infeasible) {
    QpSolution sol;
    detail::report(problem, settings.tikhonov, r.fixed_x,
                   Vector::Zero(problem.num_constraints()), sol);
    sol.status = QpStatus::kInfeasible;
    return sol;
  }
  if (n == 0) {
    QpSolution sol;
    detail::report(problem, settings.tikhonov, r.fixed_x,
                   Vector::Zero(problem.num_constraints()), sol);
    sol.status = sol.primal_residual <= settings.kkt_tolerance
                     ? QpStatus::kOptimal
                     : QpStatus::kInfeasible;
    return sol;
  }

  Matrix h, c;
  Vector q, l, u;
  const detail::Scaling scale =
      detail::equilibrate(r, h, q, c, l, u, settings.scaling_iterations);

  const double sigma = settings.sigma;
  const double alpha = settings.relaxation;
  double rho = settings.rho;
  auto factor = [&](double rho_value) {
    Matrix k = h;
    k.diagonal().array() += sigma;
    if (m > 0) k.noalias() += rho_value * c.transpose() * c;
    return Eigen::LLT<Matrix>(k);
  };
  Eigen::LLT<Matrix> llt = factor(rho);

  Vector x = Vector::Zero(n);
  Vector z = Vector::Zero(m);
  Vector y = Vector::Zero(m);
  for (Index i = 0; i < m; ++i) z(i) = std::clamp(0.0, l(i), u(i));

  const Vector inv_d = scale.var.cwiseInverse();
  const Vector inv_e = scale.row.cwiseInverse();

  auto try_polish = [&](const Vector& xs, const Vector& zs,
                        const Vector& ys) -> std::optional<QpSolution> {
    std::vector<Side> active(m, Side::kInactive);
    for (Index i = 0; i < m; ++i) {
      if (zs(i) - l(i) < -ys(i)) active[i] = Side::kLower;
      else if (u(i) - zs(i) < ys(i)) active[i] = Side::kUpper;
    }
    (void)xs;
    detail::PolishResult p =
        detail::polish(r, std::move(active), settings.max_polish_rounds);
    if (!p.success) return std::nullopt;
    QpSolution sol = detail::lift(problem, r, p.x, p.y, &p.active,
                                  settings.tikhonov);
    if (!detail::meets_tolerance(sol, settings.kkt_tolerance))
      return std::nullopt;
    sol.status = QpStatus::kOptimal;
    sol.polished = true;
    return sol;
  };

  double eps = settings.admm_tolerance;
  double best_primal = kInfinity;
  int stagnant = 0;
  int last_polish = -1000;
  int polish_interval = 50;
  Vector x_tilde(n), z_tilde(m), z_relaxed(m), y_prev(m);

  for (int iter = 1; iter <= settings.max_iterations; ++iter) {
    Vector rhs = sigma * x - q;
    if (m > 0) rhs.noalias() += c.transpose() * (rho * z - y);
    x_tilde = llt.solve(rhs);
    z_tilde.noalias() = c * x_tilde;
    x = alpha * x_tilde + (1.0 - alpha) * x;
    z_relaxed = alpha * z_tilde + (1.0 - alpha) * z;
    y_prev = y;
    Vector z_next = (z_relaxed + y / rho).cwiseMax(l).cwiseMin(u);
    y += rho * (z_relaxed - z_next);
    z = std::move(z_next);

    // Unscaled residuals.
    const Vector cx = m > 0 ? Vector(c * x) : Vector(0);
    const Vector hx = h * x;
    const Vector cty = m > 0 ? Vector(c.transpose() * y) : Vector::Zero(n);
    const double scaled_primal = m > 0 ? (cx - z).cwiseAbs().maxCoeff() : 0.0;
    const double primal =
        m > 0 ? inv_e.cwiseProduct(cx - z).cwiseAbs().maxCoeff() : 0.0;
    const double dual =
        inv_d.cwiseProduct(hx + q + cty).cwiseAbs().maxCoeff() / scale.cost;
    const double primal_norm =
        m > 0 ? std::max(inv_e.cwiseProduct(cx).cwiseAbs().maxCoeff(),
                         inv_e.cwiseProduct(z).cwiseAbs().maxCoeff())
              : 0.0;
    const double dual_norm =
        std::max({inv_d.cwiseProduct(hx).cwiseAbs().maxCoeff(),
                  inv_d.cwiseProduct(cty).cwiseAbs().maxCoeff(),
                  inv_d.cwiseProduct(q).cwiseAbs().maxCoeff()}) /
        scale.cost;

    const bool converged = primal <= eps * (1.0 + primal_norm) &&
                           dual <= eps * (1.0 + dual_norm);
    const bool close = primal <= 1e-4 * (1.0 + primal_norm) &&
                       dual <= 1e-4 * (1.0 + dual_norm);
    if (converged || (close && iter - last_polish >= polish_interval)) {
      last_polish = iter;
      if (auto sol = try_polish(x, z, y)) {
        sol->iterations = iter;
        return *sol;
      }
      if (converged) eps = std::max(eps * 1e-2, 1e-13);
      else polish_interval = std::min(2 * polish_interval, 5000);
    }

    // Infeasibility detection.
    if (scaled_primal > settings.stagnation_floor) {
      if (scaled_primal < 0.99 * best_primal) {
        best_primal = scaled_primal;
        stagnant = 0;
      } else {
        ++stagnant;
      }
    } else {
      stagnant = 0;
      best_primal = scaled_primal;
    }
    if (stagnant >= settings.stagnation_window && m > 0) {
      Vector w = scale.row.cwiseProduct(y - y_prev);
      const double wn = w.cwiseAbs().maxCoeff();
      if (wn > 0.0) {
        w /= wn;
        const double cert = (r.rows.transpose() * w).cwiseAbs().maxCoeff();
        double support = 0.0;
        bool valid = true;
        for (Index i = 0; i < m; ++i) {
          if (w(i) > 0.0) {
            if (!std::isfinite(r.upper(i))) { valid = valid && w(i) < 1e-12; continue; }
            support += r.upper(i) * w(i);
          } else if (w(i) < 0.0) {
            if (!std::isfinite(r.lower(i))) { valid = valid && -w(i) < 1e-12; continue; }
            support += r.lower(i) * w(i);
          }
        }
        if (valid && cert <= settings.certificate_tolerance && support < 0.0) {
          QpSolution sol;
          Vector xr = scale.var.cwiseProduct(x);
          Vector yr = Vector::Zero(m);
          sol = detail::lift(problem, r, xr, yr, nullptr, settings.tikhonov);
          sol.status = QpStatus::kInfeasible;
          sol.iterations = iter;
          return sol;
        }
      }
    }

    // Step-size adaptation.
    if (iter % 25 == 0 && m > 0) {
      const double pn = std::max(cx.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
      const double dn = std::max({hx.cwiseAbs().maxCoeff(),
                                  cty.cwiseAbs().maxCoeff(),
                                  q.cwiseAbs().maxCoeff()});
      const double sdual = (hx + q + cty).cwiseAbs().maxCoeff();
      const double ratio = (scaled_primal / (pn + 1e-30)) /
                           (sdual / (dn + 1e-30) + 1e-30);
      double rho_new = std::clamp(rho * std::sqrt(ratio), 1e-6, 1e6);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        // Keep y unchanged; rescaling rho only changes the splitting.
        rho = rho_new;
        llt = factor(rho);
      }
    }
  }

  // Out of iterations: one last polish, else report the ADMM iterate.
  if (auto sol = try_polish(x, z, y)) {
    sol->iterations = settings.max_iterations;
    return *sol;
  }
  Vector xr = scale.var.cwiseProduct(x);
  Vector yr = scale.row.cwiseProduct(y) / scale.cost;
  QpSolution sol = detail::lift(problem, r, xr, yr, nullptr, settings.tikhonov);
  sol.status = detail::meets_tolerance(sol, settings.kkt_tolerance)
                   ? QpStatus::kOptimal
                   : QpStatus::kMaxIterations;
  sol.iterations = settings.max_iterations;
  return sol;
}

}  // namespace detail

// ADMM with active-set polishing. A run that exhausts its iterations is
// retried from scratch with rho scaled by 10, 100 and 0.01.
inline QpSolution solve_qp(const QpProblem& problem,
                           const QpSettings& settings = {}) {
  QpSolution sol = detail::solve_qp_once(problem, settings);
  for (double factor : {10.0, 100.0, 0.01}) {
    if (sol.status != QpStatus::kMaxIterations) break;
    QpSettings retry = settings;
    retry.rho = settings.rho * factor;
    QpSolution next = detail::solve_qp_once(problem, retry);
    next.iterations += sol.iterations;
    sol = std::move(next);
  }
  return sol;
}

// Phase-1 feasibility of {x : A x <= b, lo <= x <= hi}: minimizes the total
// slack sum(s) subject to A x - s <= b, s >= 0 with solve_qp. Returns a point
// satisfying A x <= b + 1e-8 inside the box, or nullopt.
inline std::optional<Vector> check_lp_feasibility(const Matrix& a,
                                                  const Vector& b,
                                                  const Vector& lo,
                                                  const Vector& hi,
                                                  const QpSettings& settings = {}) {
  const Index d = lo.size();
  require(hi.size() == d, "check_lp_feasibility: lo/hi size mismatch");
  require(a.rows() == b.size(), "check_lp_feasibility: A/b size mismatch");
  require(a.rows() == 0 || a.cols() == d,
          "check_lp_feasibility: A must have d columns");
  for (Index j = 0; j < d; ++j)
    if (!(lo(j) <= hi(j))) return std::nullopt;
  const Index c = a.rows();
  if (c == 0) {
    Vector x(d);
    for (Index j = 0; j < d; ++j) x(j) = std::clamp(0.0, lo(j), hi(j));
    return x;
  }
  const Index nv = d + c;
  Matrix big_a = Matrix::Zero(c, nv);
  big_a.leftCols(d) = a;
  big_a.rightCols(c) = -Matrix::Identity(c, c);
  Vector lin = Vector::Zero(nv);
  lin.tail(c).setOnes();
  Vector big_lo(nv), big_hi(nv);
  big_lo << lo, Vector::Zero(c);
  big_hi << hi, Vector::Constant(c, kInfinity);
  QpProblem phase1(Matrix::Zero(nv, nv), std::move(lin), std::move(big_a), b,
                   std::move(big_lo), std::move(big_hi));
  QpSolution sol = solve_qp(phase1, settings);
  if (sol.status == QpStatus::kInfeasible) return std::nullopt;
  Vector x = sol.x.head(d);
  for (Index j = 0; j < d; ++j) x(j) = std::clamp(x(j), lo(j), hi(j));
  const double violation = (a * x - b).maxCoeff();
  if (violation <= 1e-8) return x;
  return std::nullopt;
}

}  // namespace lossforge::numopt
