#include "bvfsm/problems.hpp"
#include "bvfsm/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

using namespace bvfsm;

namespace {

using Fn = std::function<double(const Vector&, const Vector&)>;
using Grad = std::function<Vector(const Vector&, const Vector&)>;

ScalarField field(Fn e, Grad gx, Grad gy) {
  ScalarField s;
  s.eval = std::move(e);
  s.grad_x = std::move(gx);
  s.grad_y = std::move(gy);
  return s;
}

Vector v1(double a) { return Vector::Constant(1, a); }

// f = 1/2 |y - b|^2 with b fixed, F = 1/2 |y|^2 + 1/2 |x|^2.
BilevelProblem shifted_quadratic(const Vector& b) {
  BilevelProblem p;
  p.m = 1;
  p.n = static_cast<int>(b.size());
  p.ul_set = FeasibleSet::whole_space(1);
  p.F = field([](const Vector& x, const Vector& y) { return 0.5 * y.squaredNorm() + 0.5 * x.squaredNorm(); },
              [](const Vector& x, const Vector&) { return Vector(x); },
              [](const Vector&, const Vector& y) { return Vector(y); });
  p.f = field([b](const Vector&, const Vector& y) { return 0.5 * (y - b).squaredNorm(); },
              [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); },
              [b](const Vector&, const Vector& y) { return Vector(y - b); });
  return p;
}

// F = (x - 1)^2 + y^2, f = (y - x)^2 with scalar x and y.
BilevelProblem smooth_toy(double F_sign = 1.0) {
  BilevelProblem p;
  p.m = 1;
  p.n = 1;
  p.ul_set = FeasibleSet::whole_space(1);
  p.F = field(
      [F_sign](const Vector& x, const Vector& y) {
        return (x[0] - 1) * (x[0] - 1) + F_sign * y[0] * y[0];
      },
      [](const Vector& x, const Vector&) { return v1(2 * (x[0] - 1)); },
      [F_sign](const Vector&, const Vector& y) { return v1(2 * F_sign * y[0]); });
  p.f = field([](const Vector& x, const Vector& y) { return (y[0] - x[0]) * (y[0] - x[0]); },
              [](const Vector& x, const Vector& y) { return v1(-2 * (y[0] - x[0])); },
              [](const Vector& x, const Vector& y) { return v1(2 * (y[0] - x[0])); });
  return p;
}

SolverConfig quadratic_cfg() {
  SolverConfig c;
  c.aux_f = AuxiliaryFunction::quadratic();
  return c;
}

bool same_bits(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST(RegularizedLL, ClosedFormMinimizer) {
  Vector b(3);
  b << 1.0, -2.0, 0.5;
  const auto p = shifted_quadratic(b);
  SolverConfig cfg;
  cfg.T_z = 2000;
  cfg.step_z = 0.5;
  for (double mu : {0.3, 1e-12}) {
    ScheduleState s = ScheduleState::geometric(mu, 1, 1, 1);
    const auto st = solve_regularized_ll(p, v1(0), s, cfg, Vector::Zero(3));
    EXPECT_LT((st.z - b / (1 + mu)).norm(), 1e-12);
    const double fstar = 0.5 * (st.z - b).squaredNorm() + 0.5 * mu * st.z.squaredNorm();
    EXPECT_NEAR(st.f_star_approx, fstar, 1e-14);
  }
}

TEST(RegularizedLL, SineMatchesGridMinimizer) {
  Vector c(1);
  c << 2.0;
  const auto bp = make_sin_problem(1, 2.0, c);
  SolverConfig cfg;
  cfg.T_z = 20000;
  cfg.step_z = 0.05;
  const ScheduleState s = ScheduleState::geometric(0.1, 1, 1, 1);
  const auto st = solve_regularized_ll(bp.problem, v1(0), s, cfg, v1(0));
  // Grid oracle for argmin sin(y - 2) + 0.05 y^2 over [-20, 20].
  double best = 1e300, arg = 0;
  for (int i = 0; i <= 400000; ++i) {
    const double y = -20 + 1e-4 * i;
    const double v = std::sin(y - 2) + 0.05 * y * y;
    if (v < best) best = v, arg = y;
  }
  EXPECT_NEAR(st.z[0], arg, 2e-4);
}

TEST(RegularizedLL, RejectsInfeasibleStart) {
  Vector c(1);
  c << 1.0;
  const auto bp = make_constrained_sin_problem(1, 2.0, c);
  SolverConfig cfg;
  EXPECT_THROW(solve_regularized_ll(bp.problem, v1(0), cfg.schedule, cfg, v1(5)), BarrierWall);
  EXPECT_THROW(solve_regularized_ll(bp.problem, v1(0), cfg.schedule, cfg, Vector::Zero(2)),
               DimensionMismatch);
}

TEST(PenalizedInner, FlatPenaltyGoesToZero) {
  Vector b(2);
  b << 3.0, -1.0;
  const auto p = shifted_quadratic(b);
  SolverConfig cfg = quadratic_cfg();
  cfg.T_y = 5000;
  cfg.step_y = 0.1;
  ScheduleState s = ScheduleState::geometric(1, 1e-9, 1e12, 1);
  InnerState st = solve_regularized_ll(p, v1(0), s, cfg, b);
  solve_penalized_inner(p, v1(0), st, s, cfg, b);
  EXPECT_LT(st.y.norm(), 1e-6);
}

TEST(PenalizedInner, PessimisticAscendsToB) {
  Vector b(2);
  b << 3.0, -1.0;
  BilevelProblem p = shifted_quadratic(Vector::Zero(2));
  p.mode = Mode::Pessimistic;
  p.F = field([b](const Vector&, const Vector& y) { return -0.5 * (y - b).squaredNorm(); },
              [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); },
              [b](const Vector&, const Vector& y) { return Vector(-(y - b)); });
  // A constant f keeps the value-function penalty at zero.
  p.f = field([](const Vector&, const Vector&) { return 0.0; },
              [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); },
              [](const Vector&, const Vector& y) { return Vector(Vector::Zero(y.size())); });
  SolverConfig cfg = quadratic_cfg();
  cfg.T_y = 5000;
  cfg.step_y = 0.1;
  ScheduleState s = ScheduleState::geometric(1, 1e-12, 1, 1);
  InnerState st = solve_regularized_ll(p, v1(0), s, cfg, Vector::Zero(2));
  solve_penalized_inner(p, v1(0), st, s, cfg, Vector::Zero(2));
  EXPECT_LT((st.y - b).norm(), 1e-6);
}

TEST(PenalizedInner, SineMatchesGridOracle) {
  Vector c(2);
  c << 2.0, 2.0;
  const auto bp = make_sin_problem(2, 2.0, c);
  SolverConfig cfg = quadratic_cfg();
  cfg.T_z = 20000;
  cfg.T_y = 20000;
  cfg.step_z = 0.01;
  cfg.step_y = 0.005;
  const ScheduleState s = ScheduleState::geometric(0.01, 0.01, 0.01, 1);
  const Vector x = v1(2.4749);
  const Vector start = Vector::Constant(2, 4.2);
  InnerState st = solve_regularized_ll(bp.problem, x, s, cfg, start);
  solve_penalized_inner(bp.problem, x, st, s, cfg, start);
  // 2-D grid oracle of the penalized objective near the reference.
  double best = 1e300;
  Vector arg(2);
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      Vector y(2);
      y << 3.5 + 0.004 * i, 3.5 + 0.004 * j;
      const double v = penalized_objective(bp.problem, x, y, st, s, cfg).value();
      if (v < best) best = v, arg = y;
    }
  }
  EXPECT_LT((st.y - arg).norm(), 0.02);
  EXPECT_LT((st.y - Vector::Constant(2, 4.2375)).norm(), 0.2);
}

TEST(PenalizedInner, InfeasibleStartResetsToZ) {
  Vector c(1);
  c << 1.0;
  const auto bp = make_constrained_sin_problem(1, 2.0, c);
  SolverConfig cfg;
  const Vector x = v1(0.0);
  InnerState st = solve_regularized_ll(bp.problem, x, cfg.schedule, cfg, v1(0.5));
  EXPECT_TRUE(solve_penalized_inner(bp.problem, x, st, cfg.schedule, cfg, v1(7.0)));
  EXPECT_FALSE(solve_penalized_inner(bp.problem, x, st, cfg.schedule, cfg, st.z));
}

TEST(UlGradient, ZeroPenaltySlopeGivesFx) {
  const auto p = smooth_toy();
  const SolverConfig cfg = quadratic_cfg();
  const ScheduleState s = ScheduleState::geometric(0.1, 0.1, 0.1, 1);
  InnerState st;
  st.y = v1(0.7);
  st.z = v1(0.7);
  st.f_star_approx = p.f.eval(v1(0.7), st.z) + 0.05 * 0.49;  // above f(x, y)
  const Vector x = v1(0.7);
  EXPECT_EQ(ul_gradient(p, x, st, s, cfg), p.F.grad_x(x, st.y));
  EXPECT_EQ(ul_gradient_pessimistic(p, x, st, s, cfg), p.F.grad_x(x, st.y));
}

TEST(UlGradient, LowerLevelWithoutXGivesFx) {
  Vector b(2);
  b << 1.0, 2.0;
  const auto p = shifted_quadratic(b);
  const SolverConfig cfg = quadratic_cfg();  // f - f* > 0, so P' != 0
  InnerState st;
  st.y = Vector::Constant(2, -0.3);
  st.z = b;
  st.f_star_approx = -5.0;
  const Vector x = v1(0.4);
  EXPECT_EQ(ul_gradient(p, x, st, cfg.schedule, cfg), p.F.grad_x(x, st.y));
  EXPECT_EQ(ul_gradient_pessimistic(p, x, st, cfg.schedule, cfg), p.F.grad_x(x, st.y));
}

TEST(UlGradient, ConstrainedWithoutConstraintsMatches) {
  const auto p = smooth_toy();
  const SolverConfig cfg = quadratic_cfg();
  const ScheduleState s = ScheduleState::geometric(0.1, 0.1, 0.1, 1);
  InnerState st = solve_regularized_ll(p, v1(0.3), s, cfg, v1(0));
  solve_penalized_inner(p, v1(0.3), st, s, cfg, v1(0));
  EXPECT_TRUE(same_bits(ul_gradient(p, v1(0.3), st, s, cfg),
                        ul_gradient_constrained(p, v1(0.3), st, s, cfg)));
}

TEST(UlGradient, InactiveUpperConstraintAddsNothing) {
  auto p = smooth_toy();
  p.ul_constraints.push_back(
      field([](const Vector& x, const Vector&) { return x[0] - 10.0; },
            [](const Vector&, const Vector&) { return v1(1.0); },
            [](const Vector&, const Vector&) { return v1(0.0); }));
  SolverConfig cfg = quadratic_cfg();
  cfg.aux_H = AuxiliaryFunction::quadratic();
  const ScheduleState s = ScheduleState::geometric(0.1, 0.1, 0.1, 1);
  InnerState st = solve_regularized_ll(p, v1(0.3), s, cfg, v1(0));
  solve_penalized_inner(p, v1(0.3), st, s, cfg, v1(0));
  EXPECT_TRUE(same_bits(ul_gradient(p, v1(0.3), st, s, cfg),
                        ul_gradient_constrained(p, v1(0.3), st, s, cfg)));
}

TEST(UlGradient, AutoDispatch) {
  auto p = smooth_toy();
  const SolverConfig cfg = quadratic_cfg();
  const ScheduleState s = ScheduleState::geometric(0.1, 0.1, 0.1, 1);
  InnerState st = solve_regularized_ll(p, v1(0.3), s, cfg, v1(0));
  solve_penalized_inner(p, v1(0.3), st, s, cfg, v1(0));
  EXPECT_EQ(ul_gradient_auto(p, v1(0.3), st, s, cfg), ul_gradient(p, v1(0.3), st, s, cfg));
  p.mode = Mode::Pessimistic;
  EXPECT_EQ(ul_gradient_auto(p, v1(0.3), st, s, cfg),
            ul_gradient_pessimistic(p, v1(0.3), st, s, cfg));
}

TEST(Solve, ZeroStagesKeepsStart) {
  Vector c(2);
  c << 2.0, 2.0;
  const auto bp = make_sin_problem(2, 2.0, c);
  SolverConfig cfg;
  cfg.K = 0;
  const auto tr = solve(bp.problem, cfg, v1(8), Vector::Constant(2, 8), bp.reference);
  ASSERT_EQ(tr.records.size(), 1u);
  EXPECT_EQ(tr.x[0], 8.0);
  EXPECT_EQ(tr.records[0].k, 0);
  EXPECT_TRUE(tr.records[0].rel_err_x.has_value());
}

TEST(Solve, ConvergesOnSineProblemFromBothStarts) {
  Vector c(2);
  c << 2.0, 2.0;
  const auto bp = make_sin_problem(2, 2.0, c);
  SolverConfig cfg = quadratic_cfg();
  cfg.K = 1800;
  for (double init : {8.0, 0.0}) {
    const auto tr = solve(bp.problem, cfg, v1(init), Vector::Constant(2, init), bp.reference);
    EXPECT_LT(*tr.last().rel_err_x, 0.05) << init;
    EXPECT_LT(*tr.last().rel_err_F, 0.05) << init;
  }
}

TEST(Solve, ScheduleStrictlyDecreasesAcrossStages) {
  const auto p = smooth_toy();
  SolverConfig cfg = quadratic_cfg();
  cfg.K = 30;
  cfg.L = 2;
  const auto tr = solve(p, cfg, v1(0.5));
  for (std::size_t i = 1; i + 2 < tr.records.size(); i += 2) {
    const auto& a = tr.records[i];
    const auto& b = tr.records[i + 2];
    ASSERT_EQ(b.k, a.k + 1);
    EXPECT_LT(b.mu, a.mu);
    EXPECT_LT(b.theta, a.theta);
    EXPECT_LT(b.sigma1, a.sigma1);
    EXPECT_EQ(tr.records[i + 1].mu, a.mu);
  }
}

TEST(Solve, IteratesStayInBox) {
  auto p = smooth_toy();
  p.ul_set = FeasibleSet::box(v1(-0.25), v1(0.25));
  SolverConfig cfg = quadratic_cfg();
  cfg.K = 200;
  cfg.alpha = 0.5;
  const auto tr = solve(p, cfg, v1(3.0));
  for (const auto& r : tr.records) EXPECT_TRUE(p.ul_set.contains(r.x)) << r.x[0];
  EXPECT_NEAR(tr.x[0], 0.25, 1e-12);
}

TEST(Solve, IteratesStayInBall) {
  auto p = smooth_toy();
  p.ul_set = FeasibleSet::ball(v1(-1.0), 0.5);
  SolverConfig cfg = quadratic_cfg();
  cfg.K = 100;
  cfg.alpha = 0.3;
  const auto tr = solve(p, cfg, v1(-3.0));
  for (const auto& r : tr.records) EXPECT_TRUE(p.ul_set.contains(r.x, 1e-15));
}

TEST(Solve, ZeroPenaltyRegimeReducesToFx) {
  // f does not depend on y, so f - f* = -mu/2 |z|^2 <= 0 at every step.
  auto p = smooth_toy();
  p.f = field([](const Vector& x, const Vector&) { return std::sin(x[0]); },
              [](const Vector& x, const Vector&) { return v1(std::cos(x[0])); },
              [](const Vector&, const Vector& y) { return Vector(Vector::Zero(y.size())); });
  SolverConfig cfg = quadratic_cfg();
  for (int k = 0; k < 50; ++k) {
    const Vector x = v1(0.1 * k - 2);
    InnerState st = solve_regularized_ll(p, x, cfg.schedule, cfg, v1(0.3));
    solve_penalized_inner(p, x, st, cfg.schedule, cfg, v1(0.3));
    EXPECT_EQ(ul_gradient(p, x, st, cfg.schedule, cfg), p.F.grad_x(x, st.y));
  }
  cfg.K = 50;
  const auto tr = solve(p, cfg, v1(2.0), v1(0.3));
  for (std::size_t i = 1; i < tr.records.size(); ++i) {
    const auto& prev = tr.records[i - 1];
    const auto& r = tr.records[i];
    EXPECT_NEAR(r.x[0], prev.x[0] - cfg.alpha * 2 * (prev.x[0] - 1), 1e-14);
  }
}

TEST(Solve, PessimisticMirrorsOptimisticOnNegatedF) {
  auto pess = smooth_toy(-1.0);
  pess.mode = Mode::Pessimistic;
  // Optimistic on -F: same inner problems, negated UL gradient.
  BilevelProblem opt = pess;
  opt.mode = Mode::Optimistic;
  const ScalarField F = pess.F;
  opt.F = field([F](const Vector& x, const Vector& y) { return -F.eval(x, y); },
                [F](const Vector& x, const Vector& y) { return Vector(-F.grad_x(x, y)); },
                [F](const Vector& x, const Vector& y) { return Vector(-F.grad_y(x, y)); });
  SolverConfig cfg = quadratic_cfg();
  ScheduleState s = cfg.schedule;
  Vector x = v1(1.5), z = v1(0.0), y = v1(0.0);
  for (int k = 0; k < 100; ++k) {
    const auto a = bvfsm_step(pess, x, z, y, s, cfg);
    const auto b = bvfsm_step(opt, x, z, y, s, cfg);
    ASSERT_TRUE(same_bits(a.inner.z, b.inner.z)) << k;
    ASSERT_TRUE(same_bits(a.inner.y, b.inner.y)) << k;
    ASSERT_TRUE(same_bits(a.grad, Vector(-b.grad))) << k;
    x = a.x;
    z = a.inner.z;
    y = a.inner.y;
    s = schedule_step(s);
  }
}

TEST(Solve, ConfigAndInputChecks) {
  const auto p = smooth_toy();
  SolverConfig cfg;
  cfg.aux_B = AuxiliaryFunction::quadratic();
  EXPECT_THROW(solve(p, cfg, v1(0)), InvalidParameter);
  cfg = SolverConfig{};
  cfg.aux_B = AuxiliaryFunction::inverse().as_modified();
  EXPECT_THROW(solve(p, cfg, v1(0)), InvalidParameter);
  cfg = SolverConfig{};
  cfg.K = -1;
  EXPECT_THROW(solve(p, cfg, v1(0)), InvalidParameter);
  cfg = SolverConfig{};
  EXPECT_THROW(solve(p, cfg, Vector::Zero(2)), DimensionMismatch);
  EXPECT_THROW(solve(p, cfg, v1(0), Vector::Zero(3)), DimensionMismatch);
  EXPECT_THROW(solve(p, cfg, v1(std::nan(""))), NonFiniteEvaluation);
}

TEST(Solve, FailureCarriesContextAndTrace) {
  auto p = smooth_toy();
  const ScalarField F = p.F;
  p.F.grad_x = [F](const Vector& x, const Vector& y) -> Vector {
    if (x[0] < 0.9) return v1(std::nan(""));
    return F.grad_x(x, y);
  };
  SolverConfig cfg = quadratic_cfg();
  cfg.K = 500;
  cfg.alpha = 0.1;
  try {
    solve(p, cfg, v1(3.0));
    FAIL() << "expected SolveFailure";
  } catch (const SolveFailure& e) {
    EXPECT_NE(std::string(e.what()).find("stage"), std::string::npos);
    EXPECT_GE(e.trace().records.size(), 2u);
  }
}

TEST(Solve, WallClockCapRaisesTimeout) {
  Vector c(2);
  c << 2.0, 2.0;
  const auto bp = make_sin_problem(2, 2.0, c);
  SolverConfig cfg;
  cfg.K = 100000;
  cfg.wall_clock_cap_s = 0.05;
  try {
    solve(bp.problem, cfg, v1(8), Vector::Constant(2, 8));
    FAIL() << "expected Timeout";
  } catch (const Timeout& e) {
    EXPECT_GE(e.trace().records.size(), 2u);
    EXPECT_LT(e.trace().records.size(), 100001u);
  }
}

TEST(RelativeError, Definitions) {
  EXPECT_DOUBLE_EQ(relative_error(v1(3), v1(2)), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(3.0, -2.0), 2.5);
  EXPECT_DOUBLE_EQ(relative_error(0.25, 0.0), 0.25);
}
