#include "bvfsm/baselines.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <vector>

namespace bvfsm {

namespace {

double parse_arg(const std::string& arg, const std::string& whole) {
  try {
    std::size_t used = 0;
    const double v = std::stod(arg, &used);
    if (used != arg.size()) throw std::invalid_argument(arg);
    return v;
  } catch (const std::exception&) {
    throw InvalidParameter("bad baseline argument: " + whole);
  }
}

int parse_count(const std::string& arg, const std::string& whole) {
  const double v = parse_arg(arg, whole);
  if (v != std::floor(v) || v < 0 || v > 1e9) {
    throw InvalidParameter("baseline count must be a non-negative integer: " + whole);
  }
  return static_cast<int>(v);
}

}  // namespace

BaselineConfig BaselineConfig::parse(const std::string& name) {
  std::string head = name, arg;
  if (const auto colon = name.find(':'); colon != std::string::npos) {
    head = name.substr(0, colon);
    arg = name.substr(colon + 1);
  }
  BaselineConfig c;
  if (head == "rhg" && arg.empty()) {
    c.method = BaselineKind::RHG;
  } else if (head == "trhg") {
    c.method = BaselineKind::TRHG;
    c.I = arg.empty() ? c.T : parse_count(arg, name);
  } else if (head == "bda") {
    c.method = BaselineKind::BDA;
    if (!arg.empty()) c.aggregation = parse_arg(arg, name);
  } else if (head == "cg") {
    c.method = BaselineKind::CG;
    if (!arg.empty()) c.Q = parse_count(arg, name);
  } else if (head == "neumann") {
    c.method = BaselineKind::Neumann;
    if (!arg.empty()) c.Q = parse_count(arg, name);
  } else {
    throw InvalidParameter("unknown baseline: " + name);
  }
  c.check();
  return c;
}

std::string BaselineConfig::name() const {
  std::ostringstream os;
  switch (method) {
    case BaselineKind::RHG: os << "rhg"; break;
    case BaselineKind::TRHG: os << "trhg:" << I; break;
    case BaselineKind::BDA: os << "bda:" << aggregation; break;
    case BaselineKind::CG: os << "cg:" << Q; break;
    case BaselineKind::Neumann: os << "neumann:" << Q; break;
  }
  return os.str();
}

void BaselineConfig::check() const {
  if (T < 0) throw InvalidParameter("baseline T must be >= 0");
  if (method == BaselineKind::TRHG && (I < 0 || I > T)) {
    throw InvalidParameter("TRHG window must satisfy 0 <= I <= T");
  }
  if (method == BaselineKind::BDA && !(aggregation >= 0.0 && aggregation <= 1.0)) {
    throw InvalidParameter("BDA aggregation must lie in [0, 1]");
  }
  if ((method == BaselineKind::CG || method == BaselineKind::Neumann) && Q < 1) {
    throw InvalidParameter("Q must be >= 1");
  }
  if (!(ll_step > 0.0) || !(alpha > 0.0) || !(hvp_eps > 0.0) || neumann_scale < 0.0) {
    throw InvalidParameter("baseline steps must be > 0");
  }
}

Vector mixed_vjp(const ScalarField& f, const Vector& x, const Vector& y, const Vector& v,
                 double eps) {
  const Vector up = f.grad_x(x, y + eps * v);
  const Vector down = f.grad_x(x, y - eps * v);
  Vector r = (up - down) / (2.0 * eps);
  require_finite(r, "mixed second derivative");
  return r;
}

namespace {

// Reverse pass over y_{t+1} = y_t - s [(1 - a) f_y + a F_y] restricted to the
// last `window` steps. a = 0 is plain RHG.
Hypergradient unrolled(const BilevelProblem& p, const Vector& x, const Vector& y0,
                       const BaselineConfig& cfg, int window, double agg) {
  if (y0.size() != p.n) throw DimensionMismatch("baseline: y0 size != n");
  const double s = cfg.ll_step;
  const double eps = cfg.hvp_eps;
  std::vector<Vector> ys;
  ys.reserve(cfg.T + 1);
  ys.push_back(y0);
  for (int t = 0; t < cfg.T; ++t) {
    const Vector& y = ys.back();
    Vector d = p.f.grad_y(x, y);
    if (agg != 0.0) d = (1.0 - agg) * d + agg * p.F.grad_y(x, y);
    Vector next = y - s * d;
    if (!next.allFinite()) {
      std::ostringstream os;
      os << "non-finite LL iterate at step " << t + 1;
      throw NonFiniteEvaluation(os.str());
    }
    ys.push_back(std::move(next));
  }
  Hypergradient r;
  r.y_T = ys.back();
  r.grad = p.F.grad_x(x, r.y_T);
  Vector lambda = p.F.grad_y(x, r.y_T);
  auto grad_f = [&](const Vector& y) { return p.f.grad_y(x, y); };
  auto grad_F = [&](const Vector& y) { return p.F.grad_y(x, y); };
  for (int t = cfg.T - 1; t >= cfg.T - window; --t) {
    const Vector& y = ys[t];
    Vector mixed = mixed_vjp(p.f, x, y, lambda, eps);
    Vector curv = hvp(grad_f, y, lambda, eps);
    if (agg != 0.0) {
      mixed = (1.0 - agg) * mixed + agg * mixed_vjp(p.F, x, y, lambda, eps);
      curv = (1.0 - agg) * curv + agg * hvp(grad_F, y, lambda, eps);
    }
    r.grad -= s * mixed;
    lambda -= s * curv;
    ++r.iterations;
  }
  require_finite(r.grad, "hypergradient");
  return r;
}

}  // namespace

Hypergradient rhg_hypergradient(const BilevelProblem& p, const Vector& x,
                                const Vector& y0, const BaselineConfig& cfg) {
  return unrolled(p, x, y0, cfg, cfg.T, 0.0);
}

Hypergradient trhg_hypergradient(const BilevelProblem& p, const Vector& x,
                                 const Vector& y0, const BaselineConfig& cfg) {
  if (cfg.I < 0 || cfg.I > cfg.T) throw InvalidParameter("TRHG window must satisfy 0 <= I <= T");
  return unrolled(p, x, y0, cfg, cfg.I, 0.0);
}

Hypergradient bda_hypergradient(const BilevelProblem& p, const Vector& x,
                                const Vector& y0, const BaselineConfig& cfg) {
  return unrolled(p, x, y0, cfg, cfg.T, cfg.aggregation);
}

Hypergradient cg_hypergradient(const BilevelProblem& p, const Vector& x,
                               const Vector& y_T, const BaselineConfig& cfg) {
  auto grad_f = [&](const Vector& y) { return p.f.grad_y(x, y); };
  const Vector b = p.F.grad_y(x, y_T);
  Hypergradient r;
  r.y_T = y_T;
  Vector v = Vector::Zero(p.n);
  Vector res = b;
  Vector dir = res;
  double rr = res.squaredNorm();
  // Relative residual 1e-10: below that the finite-difference products are noise.
  const double stop = 1e-20 * std::max(rr, 1e-300);
  for (int q = 0; q < cfg.Q && rr > stop; ++q) {
    const Vector Hd = hvp(grad_f, y_T, dir, cfg.hvp_eps);
    const double curv = dir.dot(Hd);
    if (!(curv > 0.0)) {
      r.breakdown = true;
      break;
    }
    const double a = rr / curv;
    v += a * dir;
    res -= a * Hd;
    const double rr_next = res.squaredNorm();
    dir = res + (rr_next / rr) * dir;
    rr = rr_next;
    ++r.iterations;
  }
  r.grad = p.F.grad_x(x, y_T) - mixed_vjp(p.f, x, y_T, v, cfg.hvp_eps);
  require_finite(r.grad, "hypergradient");
  return r;
}

Hypergradient neumann_hypergradient(const BilevelProblem& p, const Vector& x,
                                    const Vector& y_T, const BaselineConfig& cfg) {
  auto grad_f = [&](const Vector& y) { return p.f.grad_y(x, y); };
  const double s = cfg.neumann_scale > 0.0 ? cfg.neumann_scale : cfg.ll_step;
  Hypergradient r;
  r.y_T = y_T;
  Vector term = p.F.grad_y(x, y_T);
  Vector sum = term;
  double last = term.norm();
  int growth = 0;
  r.iterations = 1;
  for (int q = 1; q < cfg.Q; ++q) {
    term -= s * hvp(grad_f, y_T, term, cfg.hvp_eps);
    sum += term;
    ++r.iterations;
    const double now = term.norm();
    growth = now > last ? growth + 1 : 0;
    last = now;
    if (growth >= 5) r.diverging = true;
  }
  r.grad = p.F.grad_x(x, y_T) - mixed_vjp(p.f, x, y_T, s * sum, cfg.hvp_eps);
  require_finite(r.grad, "hypergradient");
  return r;
}

Vector ll_descent(const BilevelProblem& p, const Vector& x, const Vector& y0, int T,
                  double step) {
  Vector y = y0;
  for (int t = 0; t < T; ++t) {
    y -= step * p.f.grad_y(x, y);
    if (!y.allFinite()) {
      std::ostringstream os;
      os << "non-finite LL iterate at step " << t + 1;
      throw NonFiniteEvaluation(os.str());
    }
  }
  return y;
}

Hypergradient baseline_hypergradient(const BilevelProblem& p, const Vector& x,
                                     const Vector& y0, const BaselineConfig& cfg) {
  switch (cfg.method) {
    case BaselineKind::RHG: return rhg_hypergradient(p, x, y0, cfg);
    case BaselineKind::TRHG: return trhg_hypergradient(p, x, y0, cfg);
    case BaselineKind::BDA: return bda_hypergradient(p, x, y0, cfg);
    case BaselineKind::CG:
      return cg_hypergradient(p, x, ll_descent(p, x, y0, cfg.T, cfg.ll_step), cfg);
    case BaselineKind::Neumann:
      return neumann_hypergradient(p, x, ll_descent(p, x, y0, cfg.T, cfg.ll_step), cfg);
  }
  throw InvalidParameter("unknown baseline kind");
}

SolveTrace run_baseline(const BilevelProblem& p, const BaselineConfig& cfg, int K,
                        const Vector& x0, const Vector& y0,
                        const std::optional<Reference>& ref, double wall_clock_cap_s) {
  p.check();
  cfg.check();
  if (K < 0) throw InvalidParameter("K must be >= 0");
  if (x0.size() != p.m) throw DimensionMismatch("run_baseline: x0 size != m");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

  SolveTrace trace;
  Vector x = p.ul_set.project(x0);
  Vector y = y0.size() == 0 ? Vector::Zero(p.n) : y0;
  auto record = [&](int k, double gnorm) {
    TraceRecord r;
    r.k = k;
    r.l = k == 0 ? 0 : 1;
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
    trace.records.push_back(std::move(r));
  };
  auto finish = [&] {
    trace.x = x;
    trace.y = y;
    trace.z = y;
  };
  record(0, 0.0);
  for (int k = 1; k <= K; ++k) {
    Hypergradient h;
    try {
      h = baseline_hypergradient(p, x, y, cfg);
      x = p.ul_set.project(x - cfg.alpha * h.grad);
      require_finite(x, "UL iterate");
    } catch (const Error& e) {
      finish();
      std::ostringstream os;
      os << cfg.name() << " iteration " << k << ": " << e.what();
      throw SolveFailure(os.str(), std::move(trace));
    }
    y = std::move(h.y_T);
    record(k, h.grad.norm());
    if (wall_clock_cap_s > 0.0 && elapsed() > wall_clock_cap_s) {
      finish();
      throw Timeout(cfg.name() + ": wall-clock cap exceeded", std::move(trace));
    }
  }
  finish();
  return trace;
}

}  // namespace bvfsm
