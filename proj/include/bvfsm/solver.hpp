#pragma once

// Value-function-based sequential minimization for optimistic, constrained
// and pessimistic bilevel problems.

#include "bvfsm/auxfun.hpp"
#include "bvfsm/core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bvfsm {

struct SolverConfig {
  int K = 1000;
  int L = 1;
  int T_z = 50;
  int T_y = 25;
  double alpha = 0.01;
  double step_z = 0.01;
  double step_y = 0.01;
  ScheduleState schedule = ScheduleState::geometric(1.0, 1.0, 1.0, 1.0 / 1.01);
  AuxiliaryFunction aux_f = AuxiliaryFunction::truncated_log(1.0).as_modified();
  AuxiliaryFunction aux_H = AuxiliaryFunction::inverse();
  AuxiliaryFunction aux_h = AuxiliaryFunction::inverse();
  AuxiliaryFunction aux_B = AuxiliaryFunction::inverse();
  bool warm_start = true;
  /// Halve an inner y step while the inner objective increases, not only
  /// at barrier walls.
  bool monotone_inner = true;
  int max_halvings = 30;
  /// 0 disables the budget.
  double wall_clock_cap_s = 0.0;

  /// Throws InvalidParameter on non-positive budgets or steps, or when
  /// aux_B is not a standard barrier.
  void check() const;
};

struct InnerState {
  Vector z;
  double f_star_approx = 0.0;
  Vector y;
  /// Wall shift applied to the value-function penalty for this state.
  double shift = 0.0;
};

/// z after T_z descent steps on f(x, .) + mu/2 |.|^2 (+ barrier on the LL
/// constraints), and f* recomputed from that z. `z0` must keep the LL
/// barriers finite.
InnerState solve_regularized_ll(const BilevelProblem& p, const Vector& x,
                                const ScheduleState& sched, const SolverConfig& cfg,
                                const Vector& z0);

/// Regularized LL value at (x, z): f + mu/2 |z|^2 + sum P_B(h_j).
ExtendedReal regularized_ll_value(const BilevelProblem& p, const Vector& x,
                                  const Vector& z, const ScheduleState& sched,
                                  const SolverConfig& cfg);

/// Objective minimized by the y-solve: sF + P_f(f - f*) + sum P_H + sum P_h
/// + theta/2 |y|^2 with s = +1 (optimistic) or -1 (pessimistic). For the
/// pessimistic case this is the negation of the maximized objective.
ExtendedReal penalized_objective(const BilevelProblem& p, const Vector& x,
                                 const Vector& y, const InnerState& inner,
                                 const ScheduleState& sched, const SolverConfig& cfg);

/// Fills inner.y with T_y steps (descent when optimistic, ascent on the
/// maximized objective when pessimistic) starting from y0, and sets
/// inner.shift from the schedule. A y0 outside the barrier domain is
/// replaced by inner.z; returns true when that happened.
bool solve_penalized_inner(const BilevelProblem& p, const Vector& x, InnerState& inner,
                           const ScheduleState& sched, const SolverConfig& cfg,
                           const Vector& y0);

/// d/dx of the penalized value function with y, z taken from `inner`.
Vector ul_gradient(const BilevelProblem& p, const Vector& x, const InnerState& inner,
                   const ScheduleState& sched, const SolverConfig& cfg);
/// Adds the UL/LL constraint penalties and the barrier terms inside f*.
Vector ul_gradient_constrained(const BilevelProblem& p, const Vector& x,
                               const InnerState& inner, const ScheduleState& sched,
                               const SolverConfig& cfg);
/// Penalty contribution enters with a minus sign.
Vector ul_gradient_pessimistic(const BilevelProblem& p, const Vector& x,
                               const InnerState& inner, const ScheduleState& sched,
                               const SolverConfig& cfg);
/// Picks the variant from the problem's mode and constraints.
Vector ul_gradient_auto(const BilevelProblem& p, const Vector& x,
                        const InnerState& inner, const ScheduleState& sched,
                        const SolverConfig& cfg);

struct Reference {
  Vector x_star;
  Vector y_star;
  double F_star = 0.0;
};

struct TraceRecord {
  int k = 0;
  int l = 0;
  Vector x;
  Vector y;
  double F = 0.0;
  double f = 0.0;
  double ul_grad_norm = 0.0;
  std::optional<double> rel_err_x;
  std::optional<double> rel_err_F;
  double wall_time_s = 0.0;
  double mu = 0.0;
  double theta = 0.0;
  double sigma1 = 0.0;
};

struct SolveTrace {
  std::vector<TraceRecord> records;
  Vector x;
  Vector y;
  Vector z;
  int inner_resets = 0;
  int ul_halvings = 0;

  [[nodiscard]] const TraceRecord& last() const { return records.back(); }
};

/// Carries the partial trace of an aborted solve.
class SolveFailure : public Error {
 public:
  SolveFailure(const std::string& what, SolveTrace trace)
      : Error(what), trace_(std::move(trace)) {}
  [[nodiscard]] const SolveTrace& trace() const { return trace_; }

 private:
  SolveTrace trace_;
};

class Timeout : public SolveFailure {
 public:
  using SolveFailure::SolveFailure;
};

double relative_error(const Vector& x, const Vector& ref);
double relative_error(double v, double ref);

struct StepResult {
  Vector x;
  Vector grad;
  InnerState inner;
  bool reset_y = false;
  int halvings = 0;
};
/// One UL step: inner solves warm-started from z0 and y0 (y0 empty means
/// start y at the fresh z), UL gradient, projected update.
StepResult bvfsm_step(const BilevelProblem& p, const Vector& x, const Vector& z0,
                      const Vector& y0, const ScheduleState& sched,
                      const SolverConfig& cfg);

/// K stages of L projected UL steps. y0 seeds both inner iterates (zeros
/// when empty).
SolveTrace solve(const BilevelProblem& p, const SolverConfig& cfg, const Vector& x0,
                 const Vector& y0 = Vector(),
                 const std::optional<Reference>& ref = std::nullopt);

}  // namespace bvfsm
