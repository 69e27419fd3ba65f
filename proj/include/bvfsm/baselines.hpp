#pragma once

// Gradient-based hypergradient estimators used for comparison: unrolled
// reverse mode (RHG), its truncated form (TRHG), the aggregated map (BDA),
// and the implicit estimators (CG, Neumann). Second-order terms come from
// finite differences of the gradient oracles.

#include "bvfsm/core.hpp"
#include "bvfsm/solver.hpp"

#include <optional>
#include <string>

namespace bvfsm {

enum class BaselineKind { RHG, TRHG, BDA, CG, Neumann };

struct BaselineConfig {
  BaselineKind method = BaselineKind::RHG;
  int T = 100;
  int I = 100;               // TRHG window
  double aggregation = 0.5;  // BDA weight on F
  int Q = 20;                // CG iterations / Neumann terms
  double ll_step = 0.01;
  double alpha = 0.01;
  double hvp_eps = 1e-5;
  /// Neumann scale s; 0 means ll_step.
  double neumann_scale = 0.0;

  /// "rhg", "trhg:I", "bda:agg", "cg:Q", "neumann:Q".
  static BaselineConfig parse(const std::string& name);
  [[nodiscard]] std::string name() const;
  void check() const;
};

struct Hypergradient {
  Vector grad;
  Vector y_T;
  /// CG met non-positive curvature; grad uses the iterate reached so far.
  bool breakdown = false;
  /// Neumann terms grew for 5 consecutive steps.
  bool diverging = false;
  int iterations = 0;
};

/// (d^2 f / dy dx)^T v by central differences of grad_x along v.
Vector mixed_vjp(const ScalarField& f, const Vector& x, const Vector& y, const Vector& v,
                 double eps);

Hypergradient rhg_hypergradient(const BilevelProblem& p, const Vector& x,
                                const Vector& y0, const BaselineConfig& cfg);
Hypergradient trhg_hypergradient(const BilevelProblem& p, const Vector& x,
                                 const Vector& y0, const BaselineConfig& cfg);
Hypergradient bda_hypergradient(const BilevelProblem& p, const Vector& x,
                                const Vector& y0, const BaselineConfig& cfg);
/// Implicit estimators at a given (approximately stationary) y_T.
Hypergradient cg_hypergradient(const BilevelProblem& p, const Vector& x,
                               const Vector& y_T, const BaselineConfig& cfg);
Hypergradient neumann_hypergradient(const BilevelProblem& p, const Vector& x,
                                    const Vector& y_T, const BaselineConfig& cfg);

/// T plain descent steps on f(x, .) from y0.
Vector ll_descent(const BilevelProblem& p, const Vector& x, const Vector& y0, int T,
                  double step);

/// Dispatches on cfg.method; CG and Neumann first descend T steps from y0.
Hypergradient baseline_hypergradient(const BilevelProblem& p, const Vector& x,
                                     const Vector& y0, const BaselineConfig& cfg);

/// K projected UL steps x <- Proj(x - alpha * hypergradient), warm-starting
/// the LL iterate from the previous y_T.
SolveTrace run_baseline(const BilevelProblem& p, const BaselineConfig& cfg, int K,
                        const Vector& x0, const Vector& y0 = Vector(),
                        const std::optional<Reference>& ref = std::nullopt,
                        double wall_clock_cap_s = 0.0);

}  // namespace bvfsm
