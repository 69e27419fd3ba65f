// Acceptance suite: one PASS/FAIL line per criterion A1..A10. Exits non-zero
// when any criterion fails.

#include "bvfsm/baselines.hpp"
#include "bvfsm/experiment.hpp"
#include "bvfsm/problems.hpp"
#include "bvfsm/solver.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace bvfsm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vector v1(double a) { return Vector::Constant(1, a); }

ScalarField field(std::function<double(const Vector&, const Vector&)> e,
                  std::function<Vector(const Vector&, const Vector&)> gx,
                  std::function<Vector(const Vector&, const Vector&)> gy) {
  ScalarField s;
  s.eval = std::move(e);
  s.grad_x = std::move(gx);
  s.grad_y = std::move(gy);
  return s;
}

// Final errors of a baseline run; a run that blows up counts as infinitely far.
struct Final {
  double x = INFINITY;
  double F = INFINITY;
  std::string note;
};

Final baseline_final(const BenchmarkProblem& bp, const std::string& name, int K, double alpha,
                     const Vector& x0, const Vector& y0) {
  auto cfg = BaselineConfig::parse(name);
  cfg.alpha = alpha;
  Final r;
  try {
    const auto tr = run_baseline(bp.problem, cfg, K, x0, y0, bp.reference);
    r.x = *tr.last().rel_err_x;
    r.F = *tr.last().rel_err_F;
  } catch (const SolveFailure& e) {
    r.note = "diverged";
  }
  return r;
}

void a1() {
  const auto t0 = Clock::now();
  const auto bp = make_sin_problem(2, 2.0, Vector::Constant(2, 2.0));
  SolverConfig cfg;
  cfg.K = 1800;
  cfg.aux_f = AuxiliaryFunction::quadratic();
  bool ok = true;
  std::string detail;
  for (double init : {8.0, 0.0}) {
    const auto tr = solve(bp.problem, cfg, v1(init), Vector::Constant(2, init), bp.reference);
    const double ex = *tr.last().rel_err_x, eF = *tr.last().rel_err_F;
    ok = ok && ex < 0.05 && eF < 0.05;
    detail += fmt("init %g: rel_err_x %.4f rel_err_F %.4f; ", init, ex, eF);
  }
  const double dt = seconds_since(t0);
  report("A1", ok && dt < 60, detail + fmt("%.1f s", dt));
}

void a2() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (int n : {50, 100, 200}) {
    const auto bp = make_sin_problem(n, 2.0, Vector::Constant(n, 2.0));
    const double alpha = 0.03 / (n + 1);
    const Vector x0 = v1(8.0), y0 = Vector::Zero(n);
    SolverConfig cfg;
    cfg.K = 1000;
    cfg.alpha = alpha;
    double ex = INFINITY;
    try {
      ex = *solve(bp.problem, cfg, x0, y0, bp.reference).last().rel_err_x;
    } catch (const SolveFailure&) {
    }
    ok = ok && ex <= 0.30;
    detail += fmt("n=%d bvfsm %.3f", n, ex);
    for (const char* m : {"rhg", "bda:0.5", "cg:20", "neumann:20"}) {
      const Final f = baseline_final(bp, m, 1000, alpha, x0, y0);
      ok = ok && f.x > 1.5;
      detail += fmt(" %s %.3f", m, f.x);
    }
    detail += "; ";
  }
  const double dt = seconds_since(t0);
  report("A2", ok && dt < 900, detail + fmt("%.1f s", dt));
}

void a3() {
  const auto bp = make_constrained_sin_problem(2, 2.0, Vector::Constant(2, 1.0));
  SolverConfig cfg;
  cfg.K = 1000;
  const auto tr = solve(bp.problem, cfg, v1(0.0), Vector::Constant(2, 0.5), bp.reference);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : tr.records) {
    for (int i = 0; i < 2; ++i) {
      lo = std::min(lo, r.x[0] + r.y[i]);
      hi = std::max(hi, r.x[0] + r.y[i]);
    }
  }
  const double err = std::abs(tr.x[0] + 2.0 / 3.0);
  report("A3", err < 0.1 && lo >= -0.05 && hi <= 1.05,
         fmt("|x - x*| %.4f, x + y_i in [%.4f, %.4f]", err, lo, hi));
}

void a4() {
  const auto bp = make_pessimistic_sin_problem(2, 2.0, Vector::Constant(2, 2.0));
  const Vector x0 = v1(8.0), y0 = Vector::Constant(2, 8.0);
  SolverConfig cfg;
  cfg.K = 1000;
  double eF = INFINITY;
  std::string note;
  try {
    eF = *solve(bp.problem, cfg, x0, y0, bp.reference).last().rel_err_F;
  } catch (const SolveFailure& e) {
    note = " (bvfsm failed)";
  }
  const Final rhg = baseline_final(bp, "rhg", 1000, 0.01, x0, y0);
  const Final bda = baseline_final(bp, "bda:0.5", 1000, 0.01, x0, y0);
  report("A4", eF < 0.1 && rhg.F > 0.5 && bda.F > 0.5,
         fmt("bvfsm rel_err_F %.4g%s; rhg %.4g %s; bda %.4g %s", eF, note.c_str(), rhg.F,
             rhg.note.c_str(), bda.F, bda.note.c_str()));
}

// Penalized value function at x, its analytic gradient, solved by long
// plain-step inner loops.
struct GradientCase {
  const char* name;
  BilevelProblem p;
  SolverConfig cfg;
  ScheduleState sched;
  std::function<Vector(const BilevelProblem&, const Vector&, const InnerState&,
                       const ScheduleState&, const SolverConfig&)>
      grad;
  std::function<Vector(double)> start;
  std::vector<double> probes;
};

InnerState solve_inner(const GradientCase& c, double x) {
  const Vector start = c.start(x);
  InnerState st = solve_regularized_ll(c.p, v1(x), c.sched, c.cfg, start);
  solve_penalized_inner(c.p, v1(x), st, c.sched, c.cfg, start);
  return st;
}

double phi(const GradientCase& c, double x) {
  const InnerState st = solve_inner(c, x);
  const double v = penalized_objective(c.p, v1(x), st.y, st, c.sched, c.cfg).value();
  return c.p.mode == Mode::Pessimistic ? -v : v;
}

void a5() {
  std::vector<double> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(-2.0 + 5.0 * i / 19);

  auto toy = [](double sign) {
    BilevelProblem p;
    p.m = p.n = 1;
    p.ul_set = FeasibleSet::whole_space(1);
    p.F = field([sign](const Vector& x, const Vector& y) { return (x[0] - 1) * (x[0] - 1) + sign * y[0] * y[0]; },
                [](const Vector& x, const Vector&) { return v1(2 * (x[0] - 1)); },
                [sign](const Vector&, const Vector& y) { return v1(2 * sign * y[0]); });
    p.f = field([](const Vector& x, const Vector& y) { return (y[0] - x[0]) * (y[0] - x[0]); },
                [](const Vector& x, const Vector& y) { return v1(-2 * (y[0] - x[0])); },
                [](const Vector& x, const Vector& y) { return v1(2 * (y[0] - x[0])); });
    if (sign < 0) p.mode = Mode::Pessimistic;
    return p;
  };
  SolverConfig cfg;
  cfg.aux_f = AuxiliaryFunction::quadratic();
  cfg.T_z = 20000;
  cfg.T_y = 20000;
  cfg.step_z = 0.05;
  cfg.step_y = 0.01;
  cfg.monotone_inner = false;
  const ScheduleState sched = ScheduleState::geometric(0.1, 0.1, 0.1, 1.0);

  std::vector<GradientCase> cases;
  cases.push_back({"optimistic", toy(1.0), cfg, sched, ul_gradient,
                   [](double x) { return v1(x); }, grid});
  cases.push_back({"pessimistic", toy(-1.0), cfg, sched, ul_gradient_pessimistic,
                   [](double x) { return v1(x); }, grid});
  {
    SolverConfig c = cfg;
    c.monotone_inner = true;
    c.step_z = c.step_y = 0.005;
    c.T_z = c.T_y = 40000;
    std::vector<double> xs;
    for (int i = 0; i < 20; ++i) xs.push_back(0.05 + 0.4 * i / 19);
    cases.push_back({"constrained", make_constrained_sin_problem(1, 2.0, v1(1.0)).problem, c,
                     sched, ul_gradient_constrained, [](double x) { return v1(0.5 - x); }, xs});
  }

  const double h = 1e-5;
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    double worst = 0.0;
    int probes = 0;
    for (double x : c.probes) {
      const double fd = (phi(c, x + h) - phi(c, x - h)) / (2 * h);
      const double g = c.grad(c.p, v1(x), solve_inner(c, x), c.sched, c.cfg)[0];
      const double scale = std::max(std::abs(g), std::abs(fd));
      const double err = scale < 1e-8 ? 0.0 : std::abs(g - fd) / scale;
      worst = std::max(worst, err);
      ++probes;
    }
    ok = ok && worst <= 1e-3 && probes >= 20;
    detail += fmt("%s max rel err %.2e over %d probes; ", c.name, worst, probes);
  }
  report("A5", ok, detail);
}

ScheduleState after(ScheduleState s, int steps) {
  for (int i = 0; i < steps; ++i) s = schedule_step(s);
  return s;
}

void a6() {
  const std::vector<AuxiliaryFunction> members = {
      AuxiliaryFunction::quadratic(), AuxiliaryFunction::polynomial(3), AuxiliaryFunction::inverse(),
      AuxiliaryFunction::truncated_log(1.0), AuxiliaryFunction::inverse().as_modified(),
      AuxiliaryFunction::truncated_log(1.0).as_modified()};
  int violations = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (violations++ == 0) first = what;
  };
  const double shift = 0.1;
  for (const auto& a : members) {
    // Nonnegativity and monotonicity on a dense grid.
    for (double sigma : {0.05, 1.0, 3.0}) {
      ExtendedReal prev = aux_value(a, -5.0, sigma, shift);
      for (int i = 1; i <= 7000; ++i) {
        const double w = -5.0 + 7.0 * i / 7000;
        const ExtendedReal v = aux_value(a, w, sigma, shift);
        if (v.is_finite() && v.value() < 0) fail(a.name() + " negative");
        if (!(prev <= v)) fail(a.name() + " decreasing");
        prev = v;
      }
    }
    // Slope against central differences.
    const double wall = a.is_barrier() ? (a.modified ? shift : 0.0) : 1e9;
    for (double w0 : {-3.0, -1.7, -0.6, -0.25, -0.05, 0.3, 1.4}) {
      const double h = 1e-6;
      if (w0 + 10 * h >= wall) continue;
      const double fd = (aux_value(a, w0 + h, 0.7, shift).value() -
                         aux_value(a, w0 - h, 0.7, shift).value()) / (2 * h);
      const double an = aux_slope(a, w0, 0.7, shift);
      if (std::abs(an - fd) > 1e-6 * std::max(std::abs(an), 1e-3)) fail(a.name() + " slope");
    }
    // Limits along a 200-step schedule.
    const auto s0 = ScheduleState::geometric(1.0, 1.0, 1.0, 0.95);
    const auto s200 = after(s0, 200);
    if (aux_eval(a, -0.5, s200).value() > 1e-2 * aux_eval(a, -0.5, s0).value()) {
      fail(a.name() + " interior limit");
    }
    if (a.is_penalty() && aux_eval(a, 0.1, s200).value() < 10 * aux_eval(a, 0.1, s0).value()) {
      fail(a.name() + " exterior growth");
    }
  }
  // Truncated log: C2 at -kappa.
  for (double kappa : {1.0, 0.5, 0.2}) {
    const auto a = AuxiliaryFunction::truncated_log(kappa);
    auto v = [&](double w) { return aux_value(a, w, 1.0).value(); };
    const double w0 = -kappa, h = 1e-4;
    const double d_r = (-3 * v(w0) + 4 * v(w0 + h) - v(w0 + 2 * h)) / (2 * h);
    const double d_l = (3 * v(w0) - 4 * v(w0 - h) + v(w0 - 2 * h)) / (2 * h);
    const double c_r = (2 * v(w0) - 5 * v(w0 + h) + 4 * v(w0 + 2 * h) - v(w0 + 3 * h)) / (h * h);
    const double c_l = (2 * v(w0) - 5 * v(w0 - h) + 4 * v(w0 - 2 * h) - v(w0 - 3 * h)) / (h * h);
    if (std::abs(v(w0 + 1e-12) - v(w0 - 1e-12)) > 1e-10) fail("truncated-log C0");
    if (std::abs(d_r - d_l) > 1e-4 * std::max(1.0, std::abs(d_r))) fail("truncated-log C1");
    if (std::abs(c_r - c_l) > 1e-4 * std::max(1.0, std::abs(c_r))) fail("truncated-log C2");
  }
  report("A6", violations == 0,
         violations == 0 ? fmt("%zu members checked", members.size())
                         : fmt("%d violations, first: %s", violations, first.c_str()));
}

void a7() {
  const auto bp = make_sin_problem(1, 2.0, v1(2.0));
  const auto aux = SolverConfig{}.aux_f;
  std::vector<double> gaps;
  std::string detail;
  for (int k : {50, 100, 200, 400}) {
    const auto s = after(ScheduleState::geometric(1, 1, 1, 1 / 1.01), k);
    double worst = 0.0;
    for (int i = 0; i <= 40; ++i) {
      const Vector x = v1(-2 + 0.2 * i);
      worst = std::max(worst, std::abs(dense_penalized_phi(bp.problem, x, s, aux) -
                                       brute_force_phi(bp.problem, x)));
    }
    gaps.push_back(worst);
    detail += fmt("k=%d %.4f; ", k, worst);
  }
  bool ok = true;
  for (std::size_t i = 1; i < gaps.size(); ++i) ok = ok && gaps[i] <= gaps[i - 1];
  report("A7", ok, detail);
}

void a8() {
  const int m = 2, n = 4;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  const Eigen::MatrixXd R = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return g(rng); });
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(R).householderQ();
  const Vector ev = Vector::LinSpaced(n, 1.0, 3.0);
  const Eigen::MatrixXd A = Q * ev.asDiagonal() * Q.transpose();
  const Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(n, m, [&] { return g(rng); });
  const Vector b = Vector::NullaryExpr(n, [&] { return g(rng); });
  BilevelProblem p;
  p.m = m;
  p.n = n;
  p.ul_set = FeasibleSet::whole_space(m);
  p.f = field([A, B](const Vector& x, const Vector& y) { return 0.5 * y.dot(A * y) - y.dot(B * x); },
              [B](const Vector&, const Vector& y) -> Vector { return -B.transpose() * y; },
              [A, B](const Vector& x, const Vector& y) -> Vector { return A * y - B * x; });
  p.F = field([b](const Vector& x, const Vector& y) { return 0.5 * (y - b).squaredNorm() + 0.5 * x.squaredNorm(); },
              [](const Vector& x, const Vector&) { return Vector(x); },
              [b](const Vector&, const Vector& y) -> Vector { return y - b; });
  const Vector x = Vector::Constant(m, 0.9);
  const Vector ystar = A.ldlt().solve(B * x);
  const Vector exact = x + B.transpose() * A.ldlt().solve(ystar - b);

  bool ok = true;
  std::string detail;
  // BDA's fixed point is biased by the aggregation weight, so it is taken small.
  for (const char* name : {"rhg", "trhg", "bda:0.0001", "cg:200", "neumann:200"}) {
    auto cfg = BaselineConfig::parse(name);
    cfg.T = cfg.I = 200;
    cfg.ll_step = 0.3;
    const Vector h = baseline_hypergradient(p, x, Vector::Zero(n), cfg).grad;
    const double err = (h - exact).norm() / exact.norm();
    ok = ok && err <= 1e-3;
    detail += fmt("%s %.1e; ", name, err);
  }
  auto cfg = BaselineConfig::parse("trhg");
  cfg.T = cfg.I = 200;
  cfg.ll_step = 0.3;
  const Vector t = trhg_hypergradient(p, x, Vector::Zero(n), cfg).grad;
  const Vector r = rhg_hypergradient(p, x, Vector::Zero(n), cfg).grad;
  const bool bitwise = std::memcmp(t.data(), r.data(), sizeof(double) * m) == 0;
  report("A8", ok && bitwise, detail + (bitwise ? "trhg(I=T) == rhg bitwise" : "trhg(I=T) != rhg"));
}

void a9() {
  const auto out = std::filesystem::temp_directory_path() / "bvfsm_acceptance_a9";
  nlohmann::json doc = {{"methods", {"bvfsm", "cg:20", "neumann:20"}},
                        {"x0", 8},
                        {"y0", 8},
                        {"out_dir", out.string()},
                        {"timing", {{"family", "sin"}, {"params", "a=2,c=2"}, {"sizes", {{1, 1000}}}, {"repeats", 7}}}};
  const auto rows = time_steps(ExperimentConfig::from_json(doc));
  const double bv = rows.at(0).median_s;
  const double best = std::min(rows.at(1).median_s, rows.at(2).median_s);
  report("A9", bv <= 0.5 * best,
         fmt("median step bvfsm %.3g ms, cg %.3g ms, neumann %.3g ms, ratio %.2f", bv * 1e3,
             rows[1].median_s * 1e3, rows[2].median_s * 1e3, best / bv));
}

void a10() {
  const auto t0 = Clock::now();
  HypercleanOptions o;
  const auto bp = make_hyperclean_problem(o);
  SolverConfig cfg;
  cfg.K = 300;
  cfg.alpha = 10;
  const auto tr = solve(bp.problem, cfg, bp.x0_hint, bp.y0_hint);
  const auto& d = *bp.hyperclean;
  const Vector w = hyperclean_weights(d, tr.x);
  double bad = 0, good = 0;
  int nb = 0, ng = 0;
  for (int i = 0; i < w.size(); ++i) {
    if (d.corrupted[i]) bad += w[i], ++nb;
    else good += w[i], ++ng;
  }
  const double gap = good / ng - bad / nb;
  const double l0 = hyperclean_val_loss(d, tr.records.front().y);
  const double l1 = hyperclean_val_loss(d, tr.y);
  const double dt = seconds_since(t0);
  report("A10", gap >= 0.2 && l1 < l0 && dt < 120,
         fmt("weight gap %.3f, val loss %.4f -> %.4f, %.1f s", gap, l0, l1, dt));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, void (*)()>> suite = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};
  for (const auto& [id, fn] : suite) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, suite.size());
  return failures == 0 ? 0 : 1;
}
