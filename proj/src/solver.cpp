#include "bvfsm/solver.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace bvfsm {

void SolverConfig::check() const {
  if (K < 0) throw InvalidParameter("K must be >= 0");
  if (L < 1 || T_z < 1 || T_y < 1) throw InvalidParameter("L, T_z, T_y must be >= 1");
  if (!(alpha > 0.0) || !(step_z > 0.0) || !(step_y > 0.0)) {
    throw InvalidParameter("step sizes must be > 0");
  }
  if (!aux_B.is_barrier() || aux_B.modified) {
    throw InvalidParameter("aux_B must be a standard (unshifted) barrier");
  }
  if (max_halvings < 0) throw InvalidParameter("max_halvings must be >= 0");
  schedule.check();
}

namespace {

double sign_of(Mode mode) { return mode == Mode::Pessimistic ? -1.0 : 1.0; }

// Barrier sum over the LL constraints at (x, z), as used inside f*.
ExtendedReal ll_barrier(const BilevelProblem& p, const Vector& x, const Vector& z,
                        const ScheduleState& sched, const SolverConfig& cfg) {
  ExtendedReal total(0.0);
  for (const auto& h : p.ll_constraints) {
    total += aux_value(cfg.aux_B, h.eval(x, z), sched.sigma_B.value);
    if (total.is_infinite()) break;
  }
  return total;
}

// Value and (optionally) z-gradient of the regularized LL objective.
ExtendedReal regularized_eval(const BilevelProblem& p, const Vector& x, const Vector& z,
                              const ScheduleState& sched, const SolverConfig& cfg,
                              Vector* grad) {
  ExtendedReal v = ll_barrier(p, x, z, sched, cfg);
  if (v.is_infinite()) return v;
  const double mu = sched.mu.value;
  if (grad) {
    Vector gy;
    v += require_finite(p.f.value_and_grad_y(x, z, gy), "f");
    *grad = gy + mu * z;
    for (const auto& h : p.ll_constraints) {
      *grad += aux_slope(cfg.aux_B, h.eval(x, z), sched.sigma_B.value) * h.grad_y(x, z);
    }
    require_finite(*grad, "regularized LL gradient");
  } else {
    v += require_finite(p.f.eval(x, z), "f");
  }
  v += 0.5 * mu * z.squaredNorm();
  return v;
}

// The y-objective with the mode sign applied, plus its gradient when
// requested and finite. All sign handling for the pessimistic case lives here.
ExtendedReal inner_eval(const BilevelProblem& p, const Vector& x, const Vector& y,
                        const InnerState& inner, const ScheduleState& sched,
                        const SolverConfig& cfg, Vector* grad) {
  const double s = sign_of(p.mode);
  Vector fy;
  const double fv = grad ? p.f.value_and_grad_y(x, y, fy) : p.f.eval(x, y);
  require_finite(fv, "f");
  const double omega = fv - inner.f_star_approx;
  ExtendedReal v = aux_value(cfg.aux_f, omega, sched.sigma1.value, inner.shift);
  if (v.is_infinite()) return v;
  for (const auto& H : p.ul_constraints) {
    v += aux_value(cfg.aux_H, H.eval(x, y), sched.sigma_H.value, sched.shift_H.value);
  }
  for (const auto& h : p.ll_constraints) {
    v += aux_value(cfg.aux_h, h.eval(x, y), sched.sigma_h.value, sched.shift_h.value);
  }
  if (v.is_infinite()) return v;
  const double theta = sched.theta.value;
  v += s * require_finite(p.F.eval(x, y), "F") + 0.5 * theta * y.squaredNorm();
  if (grad) {
    *grad = s * p.F.grad_y(x, y) +
            aux_slope(cfg.aux_f, omega, sched.sigma1.value, inner.shift) * fy + theta * y;
    for (const auto& H : p.ul_constraints) {
      *grad += aux_slope(cfg.aux_H, H.eval(x, y), sched.sigma_H.value, sched.shift_H.value) *
               H.grad_y(x, y);
    }
    for (const auto& h : p.ll_constraints) {
      *grad += aux_slope(cfg.aux_h, h.eval(x, y), sched.sigma_h.value, sched.shift_h.value) *
               h.grad_y(x, y);
    }
    require_finite(*grad, "penalized inner gradient");
  }
  return v;
}

Vector ul_gradient_impl(const BilevelProblem& p, const Vector& x, const InnerState& inner,
                        const ScheduleState& sched, const SolverConfig& cfg,
                        bool with_constraints, double sign) {
  const Vector& y = inner.y;
  const Vector& z = inner.z;
  Vector g = p.F.grad_x(x, y);
  const double omega = require_finite(p.f.eval(x, y), "f") - inner.f_star_approx;
  const double slope = aux_slope(cfg.aux_f, omega, sched.sigma1.value, inner.shift);
  Vector dfstar = p.f.grad_x(x, z);
  if (with_constraints) {
    for (const auto& h : p.ll_constraints) {
      dfstar += aux_slope(cfg.aux_B, h.eval(x, z), sched.sigma_B.value) * h.grad_x(x, z);
    }
  }
  Vector pen = slope * (p.f.grad_x(x, y) - dfstar);
  if (with_constraints) {
    for (const auto& H : p.ul_constraints) {
      pen += aux_slope(cfg.aux_H, H.eval(x, y), sched.sigma_H.value, sched.shift_H.value) *
             H.grad_x(x, y);
    }
    for (const auto& h : p.ll_constraints) {
      pen += aux_slope(cfg.aux_h, h.eval(x, y), sched.sigma_h.value, sched.shift_h.value) *
             h.grad_x(x, y);
    }
  }
  g += sign * pen;
  require_finite(g, "UL gradient");
  return g;
}

}  // namespace

ExtendedReal regularized_ll_value(const BilevelProblem& p, const Vector& x,
                                  const Vector& z, const ScheduleState& sched,
                                  const SolverConfig& cfg) {
  return regularized_eval(p, x, z, sched, cfg, nullptr);
}

InnerState solve_regularized_ll(const BilevelProblem& p, const Vector& x,
                                const ScheduleState& sched, const SolverConfig& cfg,
                                const Vector& z0) {
  if (z0.size() != p.n) throw DimensionMismatch("solve_regularized_ll: z0 size != n");
  InnerState st;
  st.z = z0;
  const bool walls = !p.ll_constraints.empty();
  if (walls && regularized_eval(p, x, st.z, sched, cfg, nullptr).is_infinite()) {
    throw BarrierWall("regularized LL: start point violates an LL constraint");
  }
  const double mu = sched.mu.value;
  Vector g;
  for (int t = 0; t < cfg.T_z; ++t) {
    if (!walls) {
      g = p.f.grad_y(x, st.z) + mu * st.z;
      require_finite(g, "regularized LL gradient");
      st.z -= cfg.step_z * g;
      continue;
    }
    regularized_eval(p, x, st.z, sched, cfg, &g);
    double step = cfg.step_z;
    int h = 0;
    for (; h <= cfg.max_halvings; ++h, step *= 0.5) {
      const Vector trial = st.z - step * g;
      if (regularized_eval(p, x, trial, sched, cfg, nullptr).is_finite()) {
        st.z = trial;
        break;
      }
    }
    if (h > cfg.max_halvings) throw BarrierWall("regularized LL: step halving exhausted");
  }
  st.f_star_approx = regularized_eval(p, x, st.z, sched, cfg, nullptr).value();
  return st;
}

ExtendedReal penalized_objective(const BilevelProblem& p, const Vector& x,
                                 const Vector& y, const InnerState& inner,
                                 const ScheduleState& sched, const SolverConfig& cfg) {
  return inner_eval(p, x, y, inner, sched, cfg, nullptr);
}

bool solve_penalized_inner(const BilevelProblem& p, const Vector& x, InnerState& inner,
                           const ScheduleState& sched, const SolverConfig& cfg,
                           const Vector& y0) {
  if (y0.size() != p.n) throw DimensionMismatch("solve_penalized_inner: y0 size != n");
  if (sched.sigma2_rule == Sigma2Rule::DynamicOffset && cfg.aux_f.modified) {
    if (!p.f_lower_bound) {
      throw InvalidParameter("dynamic wall offset needs a lower bound of f");
    }
    inner.shift = require_finite(p.f.eval(x, y0), "f") - *p.f_lower_bound;
  } else {
    inner.shift = sched.sigma2.value;
  }
  bool reset = false;
  Vector y = y0;
  Vector g, gn;
  ExtendedReal val = inner_eval(p, x, y, inner, sched, cfg, &g);
  if (val.is_infinite()) {
    y = inner.z;
    reset = true;
    val = inner_eval(p, x, y, inner, sched, cfg, &g);
    if (val.is_infinite()) throw BarrierWall("penalized inner: no finite start point");
  }
  for (int t = 0; t < cfg.T_y; ++t) {
    double step = cfg.step_y;
    bool accepted = false;
    bool any_finite = false;
    for (int h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      Vector trial = y - step * g;
      const ExtendedReal vn = inner_eval(p, x, trial, inner, sched, cfg, &gn);
      if (vn.is_infinite()) continue;
      any_finite = true;
      if (cfg.monotone_inner && val < vn) continue;
      y = std::move(trial);
      val = vn;
      g.swap(gn);
      accepted = true;
      break;
    }
    if (!accepted) {
      if (!any_finite && !cfg.monotone_inner) {
        throw BarrierWall("penalized inner: step halving exhausted");
      }
      break;  // no decrease available at this resolution
    }
  }
  inner.y = std::move(y);
  return reset;
}

Vector ul_gradient(const BilevelProblem& p, const Vector& x, const InnerState& inner,
                   const ScheduleState& sched, const SolverConfig& cfg) {
  return ul_gradient_impl(p, x, inner, sched, cfg, false, 1.0);
}

Vector ul_gradient_constrained(const BilevelProblem& p, const Vector& x,
                               const InnerState& inner, const ScheduleState& sched,
                               const SolverConfig& cfg) {
  return ul_gradient_impl(p, x, inner, sched, cfg, true, 1.0);
}

Vector ul_gradient_pessimistic(const BilevelProblem& p, const Vector& x,
                               const InnerState& inner, const ScheduleState& sched,
                               const SolverConfig& cfg) {
  return ul_gradient_impl(p, x, inner, sched, cfg, p.constrained(), -1.0);
}

Vector ul_gradient_auto(const BilevelProblem& p, const Vector& x,
                        const InnerState& inner, const ScheduleState& sched,
                        const SolverConfig& cfg) {
  if (p.mode == Mode::Pessimistic) return ul_gradient_pessimistic(p, x, inner, sched, cfg);
  if (p.constrained()) return ul_gradient_constrained(p, x, inner, sched, cfg);
  return ul_gradient(p, x, inner, sched, cfg);
}

double relative_error(const Vector& x, const Vector& ref) {
  const double d = ref.norm();
  return d > 0.0 ? (x - ref).norm() / d : (x - ref).norm();
}

double relative_error(double v, double ref) {
  const double d = std::abs(ref);
  return d > 0.0 ? std::abs(v - ref) / d : std::abs(v - ref);
}

StepResult bvfsm_step(const BilevelProblem& p, const Vector& x, const Vector& z0,
                      const Vector& y0, const ScheduleState& sched,
                      const SolverConfig& cfg) {
  StepResult r;
  r.inner = solve_regularized_ll(p, x, sched, cfg, z0);
  r.reset_y = solve_penalized_inner(p, x, r.inner, sched, cfg,
                                    y0.size() == 0 ? r.inner.z : y0);
  r.grad = ul_gradient_auto(p, x, r.inner, sched, cfg);
  double alpha = cfg.alpha;
  r.x = p.ul_set.project(x - alpha * r.grad);
  if (!p.ll_constraints.empty()) {
    // keep the warm z inside the LL barrier domain at the new x
    while (regularized_ll_value(p, r.x, r.inner.z, sched, cfg).is_infinite()) {
      if (r.halvings == cfg.max_halvings) {
        r.x = x;
        break;
      }
      ++r.halvings;
      alpha *= 0.5;
      r.x = p.ul_set.project(x - alpha * r.grad);
    }
  }
  return r;
}

SolveTrace solve(const BilevelProblem& p, const SolverConfig& cfg, const Vector& x0,
                 const Vector& y0, const std::optional<Reference>& ref) {
  p.check();
  cfg.check();
  if (x0.size() != p.m) throw DimensionMismatch("solve: x0 size != m");
  if (y0.size() != 0 && y0.size() != p.n) throw DimensionMismatch("solve: y0 size != n");
  require_finite(x0, "x0");
  const Vector y_init = y0.size() == 0 ? Vector::Zero(p.n) : y0;
  require_finite(y_init, "y0");

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

  SolveTrace trace;
  ScheduleState sched = cfg.schedule;
  Vector x = p.ul_set.project(x0);
  Vector z = y_init;
  Vector y = y_init;

  auto record = [&](int k, int l, double gnorm) {
    TraceRecord r;
    r.k = k;
    r.l = l;
    r.x = x;
    r.y = y;
    r.F = p.F.eval(x, y);
    r.f = p.f.eval(x, y);
    r.ul_grad_norm = gnorm;
    if (ref) {
      r.rel_err_x = relative_error(x, ref->x_star);
      r.rel_err_F = relative_error(r.F, ref->F_star);
    }
    r.wall_time_s = elapsed();
    r.mu = sched.mu.value;
    r.theta = sched.theta.value;
    r.sigma1 = sched.sigma1.value;
    trace.records.push_back(std::move(r));
  };
  auto finish = [&] {
    trace.x = x;
    trace.y = y;
    trace.z = z;
  };

  record(0, 0, 0.0);
  for (int k = 1; k <= cfg.K; ++k) {
    for (int l = 1; l <= cfg.L; ++l) {
      StepResult step;
      try {
        step = bvfsm_step(p, x, cfg.warm_start ? z : y_init,
                          cfg.warm_start ? y : Vector(), sched, cfg);
      } catch (const Error& e) {
        finish();
        std::ostringstream os;
        os << "stage " << k << ", step " << l << ": " << e.what();
        throw SolveFailure(os.str(), std::move(trace));
      }
      x = std::move(step.x);
      z = std::move(step.inner.z);
      y = std::move(step.inner.y);
      trace.inner_resets += step.reset_y ? 1 : 0;
      trace.ul_halvings += step.halvings;
      record(k, l, step.grad.norm());
      if (cfg.wall_clock_cap_s > 0.0 && elapsed() > cfg.wall_clock_cap_s) {
        finish();
        std::ostringstream os;
        os << "wall-clock cap of " << cfg.wall_clock_cap_s << " s exceeded at stage " << k;
        throw Timeout(os.str(), std::move(trace));
      }
    }
    sched = schedule_step(sched);
  }
  finish();
  return trace;
}

}  // namespace bvfsm
