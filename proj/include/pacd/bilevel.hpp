#pragma once

// ApproxGrad: approximate lower-level solve, iterative solve of
// H_vv q = grad_v xi, hypergradient grad_u xi - H_uv q, projected upper step.

#include <optional>
#include <vector>

#include "pacd/core.hpp"

namespace pacd {

struct BilevelConfig {
  int outer_iters = 50;
  int t1 = 10;
  int t2 = 10;
  double tau = 0.1;
  double rho = 0.001;
  double beta = 0.01;
  std::optional<int> reinit_every = 10;
  double fd_step = 0.0;  // 0 picks 1e-4 * (1 + ||v||)

  void validate() const {
    require(outer_iters >= 1 && t1 >= 1 && t2 >= 1, "BilevelConfig: iteration counts must be positive");
    require(tau >= 0.0 && rho >= 0.0 && beta > 0.0, "BilevelConfig: invalid step size");
    require(!reinit_every || *reinit_every >= 1, "BilevelConfig: reinit period must be positive");
    require(fd_step >= 0.0, "BilevelConfig: negative finite-difference step");
  }
};

// Feasible set for u: the l-infinity ball of radius eps around u_base,
// intersected with a box.
struct PoisonConstraint {
  Vector u_base;
  double eps = std::numeric_limits<double>::infinity();
  Box box = Box::unbounded();
};

/// Upper cost xi(u, v) and lower cost zeta(u, v) of a bilevel program.
/// Second-order terms default to central differences of the gradients.
class BilevelProblem {
 public:
  struct UpperEval {
    double value = 0.0;
    Vector grad_v;
    Vector grad_u;
  };

  virtual ~BilevelProblem() = default;

  virtual Vector initial_u() const = 0;
  virtual Vector initial_v(Rng& rng) const = 0;
  virtual PoisonConstraint constraint() const = 0;

  // Called once per outer iteration before the lower-level solve, e.g. to
  // resample mini-batches and freeze noise.
  virtual void begin_iteration(int /*iter*/, const Vector& /*u*/, const Vector& /*v*/, Rng& /*rng*/) {}

  virtual Vector lower_grad_v(const Vector& u, const Vector& v) const = 0;
  virtual Vector lower_grad_u(const Vector& u, const Vector& v) const = 0;
  virtual UpperEval upper(const Vector& u, const Vector& v) const = 0;

  virtual Vector hvp_vv(const Vector& u, const Vector& v, const Vector& q, double h) const {
    const double qn = q.norm();
    if (qn == 0.0) return Vector::Zero(v.size());
    const Vector step = (h / qn) * q;
    return (qn / (2.0 * h)) * (lower_grad_v(u, v + step) - lower_grad_v(u, v - step));
  }

  virtual Vector hvp_uv(const Vector& u, const Vector& v, const Vector& q, double h) const {
    const double qn = q.norm();
    if (qn == 0.0) return Vector::Zero(u.size());
    const Vector step = (h / qn) * q;
    return (qn / (2.0 * h)) * (lower_grad_u(u, v + step) - lower_grad_u(u, v - step));
  }
};

struct BilevelState {
  Vector u;
  Vector v;
  Vector q;
  int iter = 0;
};

struct LinearSolveInfo {
  double residual = 0.0;
  double beta_used = 0.0;
  int halvings = 0;
};

struct BilevelHistoryRow {
  int iter = 0;
  double xi = 0.0;
  double residual = 0.0;
  double hypergrad_norm = 0.0;
  int beta_halvings = 0;
};

struct BilevelResult {
  BilevelState state;
  std::vector<BilevelHistoryRow> history;
};

inline double fd_step_for(const BilevelConfig& cfg, const Vector& v) {
  return cfg.fd_step > 0.0 ? cfg.fd_step : 1e-4 * (1.0 + v.norm());
}

/// t1 plain gradient steps v <- v - rho * grad_v zeta with u held fixed.
inline BilevelState lower_solve(const BilevelProblem& problem, BilevelState state, int t1, double rho) {
  require(t1 >= 1, "lower_solve: t1 must be positive");
  for (int t = 0; t < t1; ++t) {
    const Vector g = problem.lower_grad_v(state.u, state.v);
    if (!g.allFinite()) throw NumericalError("lower_solve: non-finite lower-level gradient");
    state.v -= rho * g;
  }
  return state;
}

/// Gradient descent on 0.5 ||H q - g||^2, H = Hessian_vv zeta, warm-started
/// from state.q. When the residual grows five iterations in a row the step
/// is halved.
inline Vector solve_linear_system(const BilevelProblem& problem, const BilevelState& state, const Vector& rhs, int t2,
                                  double beta, double fd_step, LinearSolveInfo* info = nullptr) {
  require(t2 >= 1, "solve_linear_system: t2 must be positive");
  Vector q = state.q.size() == state.v.size() ? state.q : Vector::Zero(state.v.size());
  double prev = std::numeric_limits<double>::infinity();
  int rising = 0;
  int halvings = 0;
  double res_norm = 0.0;
  for (int t = 0; t < t2; ++t) {
    const Vector r = problem.hvp_vv(state.u, state.v, q, fd_step) - rhs;
    res_norm = r.norm();
    if (!std::isfinite(res_norm)) throw NumericalError("solve_linear_system: non-finite residual");
    if (res_norm > prev) {
      if (++rising >= 5) {
        beta *= 0.5;
        ++halvings;
        rising = 0;
      }
    } else {
      rising = 0;
    }
    prev = res_norm;
    q -= beta * problem.hvp_vv(state.u, state.v, r, fd_step);
  }
  res_norm = (problem.hvp_vv(state.u, state.v, q, fd_step) - rhs).norm();
  if (info) *info = {res_norm, beta, halvings};
  return q;
}

/// grad_u xi - H_uv q at the current (u, v).
inline Vector hypergradient(const BilevelProblem& problem, const BilevelState& state, double fd_step) {
  const BilevelProblem::UpperEval up = problem.upper(state.u, state.v);
  return up.grad_u - problem.hvp_uv(state.u, state.v, state.q, fd_step);
}

/// u <- clamp(u - tau p, max(u_base - eps, lo), min(u_base + eps, hi)).
inline Vector projected_update(const Vector& u, const Vector& p, double tau, double eps, const Vector& u_base,
                               double box_lo = 0.0, double box_hi = 1.0) {
  require(u.size() == p.size() && u.size() == u_base.size(), "projected_update: dimension mismatch");
  Vector out(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double lo = std::max(u_base(i) - eps, box_lo);
    const double hi = std::min(u_base(i) + eps, box_hi);
    out(i) = std::clamp(u(i) - tau * p(i), lo, hi);
  }
  return out;
}

inline Vector project(const Vector& u, const PoisonConstraint& c) {
  return projected_update(u, Vector::Zero(u.size()), 0.0, c.eps, c.u_base, c.box.lo, c.box.hi);
}

/// Outer ApproxGrad loop. The lower variable v is re-drawn every
/// reinit_every iterations (the linear-system iterate is reset with it).
inline BilevelResult solve(BilevelProblem& problem, const BilevelConfig& cfg, const Rng& rng) {
  cfg.validate();
  const PoisonConstraint constraint = problem.constraint();
  BilevelResult out;
  BilevelState& s = out.state;
  s.u = project(problem.initial_u(), constraint);
  Rng init_rng = rng.split(0);
  s.v = problem.initial_v(init_rng);
  s.q = Vector::Zero(s.v.size());
  for (int m = 0; m < cfg.outer_iters; ++m) {
    s.iter = m;
    if (cfg.reinit_every && m > 0 && m % *cfg.reinit_every == 0) {
      Rng r = rng.split(1, static_cast<std::uint64_t>(m));
      s.v = problem.initial_v(r);
      s.q.setZero();
    }
    Rng iter_rng = rng.split(2, static_cast<std::uint64_t>(m));
    problem.begin_iteration(m, s.u, s.v, iter_rng);
    s = lower_solve(problem, s, cfg.t1, cfg.rho);
    const double h = fd_step_for(cfg, s.v);
    const BilevelProblem::UpperEval up = problem.upper(s.u, s.v);
    LinearSolveInfo info;
    s.q = solve_linear_system(problem, s, up.grad_v, cfg.t2, cfg.beta, h, &info);
    const Vector p = up.grad_u - problem.hvp_uv(s.u, s.v, s.q, h);
    if (!p.allFinite()) throw NumericalError("solve: non-finite hypergradient");
    s.u = projected_update(s.u, p, cfg.tau, constraint.eps, constraint.u_base, constraint.box.lo, constraint.box.hi);
    out.history.push_back({m, up.value, info.residual, p.norm(), info.halvings});
  }
  return out;
}

}  // namespace pacd
