#include "bvfsm/problems.hpp"

#include "bvfsm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace bvfsm {

namespace {

constexpr double kPi = std::numbers::pi;

Vector scalar_vec(double v) { return Vector::Constant(1, v); }

void require_sizes(const Vector& x, const Vector& y, int m, int n, const char* who) {
  if (x.size() != m || y.size() != n) {
    std::ostringstream os;
    os << who << ": expected (" << m << ", " << n << "), got (" << x.size() << ", "
       << y.size() << ")";
    throw DimensionMismatch(os.str());
  }
}

// f(x, y) = sum_i sin(x + y_i - c_i).
ScalarField sin_ll(std::shared_ptr<const Vector> c) {
  const int n = static_cast<int>(c->size());
  ScalarField f;
  f.eval = [c, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, 1, n, "sin LL");
    return kernels::sin_field(x[0], y, *c, nullptr).sin_sum;
  };
  f.grad_x = [c, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, 1, n, "sin LL");
    return scalar_vec(
        kernels::sin_field(x[0], y, *c, nullptr, kernels::Exec::Auto, false).cos_sum);
  };
  f.grad_y = [c, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, 1, n, "sin LL");
    Vector g;
    kernels::sin_field(x[0], y, *c, &g, kernels::Exec::Auto, false);
    return g;
  };
  f.eval_grad_y = [c, n](const Vector& x, const Vector& y, Vector& g) {
    require_sizes(x, y, 1, n, "sin LL");
    return kernels::sin_field(x[0], y, *c, &g).sin_sum;
  };
  return f;
}

// F(x, y) = (x - a)^2 + sign * |y - t|^2.
ScalarField quadratic_ul(double a, std::shared_ptr<const Vector> t, double sign) {
  const int n = static_cast<int>(t->size());
  ScalarField F;
  F.eval = [a, t, sign, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, 1, n, "sin UL");
    const double dx = x[0] - a;
    return dx * dx + sign * (y - *t).squaredNorm();
  };
  F.grad_x = [a, t, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, 1, n, "sin UL");
    return scalar_vec(2.0 * (x[0] - a));
  };
  F.grad_y = [t, sign, n](const Vector& x, const Vector& y) -> Vector {
    require_sizes(x, y, 1, n, "sin UL");
    return 2.0 * sign * (y - *t);
  };
  return F;
}

void check_sin_args(int n, const Vector& c) {
  if (n < 1) throw InvalidParameter("sine problem needs n >= 1");
  if (c.size() != n) throw DimensionMismatch("sine problem: c must have n entries");
  require_finite(c, "c");
}

BenchmarkProblem sin_base(const std::string& name, int n, double a, const Vector& c) {
  BenchmarkProblem b;
  b.name = name;
  b.params = {{"n", n}, {"a", a}};
  b.problem.m = 1;
  b.problem.n = n;
  b.problem.ul_set = FeasibleSet::whole_space(1);
  b.problem.f = sin_ll(std::make_shared<const Vector>(c));
  b.problem.f_lower_bound = -static_cast<double>(n);
  return b;
}

}  // namespace

SinSolution sin_solution(int n, double a, const Vector& c) {
  check_sin_args(n, c);
  SinSolution s;
  const double t = (2.0 * a + kPi / 2.0) / (2.0 * kPi);
  const double fl = std::floor(t);
  const double frac = t - fl;
  s.k = static_cast<long>(fl);
  if (frac > 0.5) ++s.k;
  // the two candidate lattice points are equally far from 2a
  const double d_lo = std::abs(-kPi / 2.0 + 2.0 * kPi * fl - 2.0 * a);
  const double d_hi = std::abs(-kPi / 2.0 + 2.0 * kPi * (fl + 1.0) - 2.0 * a);
  s.tie = d_lo == d_hi || frac == 0.5;
  if (s.tie) s.k = static_cast<long>(fl);
  s.C = -kPi / 2.0 + 2.0 * kPi * static_cast<double>(s.k);
  s.x_star = ((1.0 - n) * a + n * s.C) / (1.0 + n);
  s.y_star = (Vector::Constant(n, s.C) + c).array() - s.x_star;
  s.F_star = n * (s.C - 2.0 * a) * (s.C - 2.0 * a) / (1.0 + n);
  return s;
}

BenchmarkProblem make_sin_problem(int n, double a, const Vector& c) {
  check_sin_args(n, c);
  BenchmarkProblem b = sin_base("sin", n, a, c);
  auto t = std::make_shared<const Vector>((c.array() + a).matrix());
  b.problem.F = quadratic_ul(a, t, 1.0);
  const SinSolution s = sin_solution(n, a, c);
  b.reference = Reference{scalar_vec(s.x_star), s.y_star, s.F_star};
  return b;
}

BenchmarkProblem make_constrained_sin_problem(int n, double a, const Vector& c) {
  check_sin_args(n, c);
  if ((c.array() < 0.0).any() || (c.array() > 1.0).any()) {
    throw InvalidParameter("constrained sine problem needs c in [0, 1]^n");
  }
  BenchmarkProblem b = sin_base("sin-constrained", n, a, c);
  b.problem.F = quadratic_ul(a, std::make_shared<const Vector>(Vector::Constant(n, a)), 1.0);
  for (int i = 0; i < n; ++i) {
    ScalarField h;
    h.eval = [i](const Vector& x, const Vector& y) {
      const double u = x[0] + y[i] - 0.5;
      return u * u - 0.25;
    };
    h.grad_x = [i](const Vector& x, const Vector& y) {
      return scalar_vec(2.0 * (x[0] + y[i] - 0.5));
    };
    h.grad_y = [i](const Vector& x, const Vector& y) {
      Vector g = Vector::Zero(y.size());
      g[i] = 2.0 * (x[0] + y[i] - 0.5);
      return g;
    };
    b.problem.ll_constraints.push_back(std::move(h));
  }
  const double xs = (1.0 - n) * a / (1.0 + n);
  b.reference = Reference{scalar_vec(xs), Vector::Constant(n, -xs), 4.0 * n * a * a / (1.0 + n)};
  return b;
}

BenchmarkProblem make_pessimistic_sin_problem(int n, double a, const Vector& c) {
  check_sin_args(n, c);
  BenchmarkProblem b = sin_base("sin-pessimistic", n, a, c);
  auto t = std::make_shared<const Vector>((c.array() + a).matrix());
  b.problem.F = quadratic_ul(a, t, -1.0);
  b.problem.mode = Mode::Pessimistic;
  const SinSolution s = sin_solution(n, a, c);
  const Vector xs = scalar_vec(s.x_star);
  b.reference = Reference{xs, s.y_star, b.problem.F.eval(xs, s.y_star)};
  return b;
}

HypercleanData make_hyperclean_data(const HypercleanOptions& opt) {
  if (!(opt.corruption_rate >= 0.0 && opt.corruption_rate < 1.0)) {
    throw InvalidParameter("corruption_rate must lie in [0, 1)");
  }
  if (opt.dim < 1 || opt.dim > 20) throw InvalidParameter("hyperclean dim must be in [1, 20]");
  if (opt.n_train < 2 || opt.n_val < 2) throw InvalidParameter("hyperclean needs >= 2 samples per split");
  if (opt.hidden < 0) throw InvalidParameter("hidden must be >= 0");

  const Vector mean = Vector::Constant(opt.dim, opt.separation / std::sqrt(opt.dim));
  for (int attempt = 0; attempt < 10; ++attempt) {
    HypercleanData d;
    d.options = opt;
    d.seed_used = opt.seed + static_cast<std::uint64_t>(attempt);
    d.attempts = attempt + 1;
    std::mt19937_64 rng(d.seed_used);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    auto draw = [&](int count, Eigen::MatrixXd& U, Vector& v) {
      U.resize(count, opt.dim);
      v.resize(count);
      for (int i = 0; i < count; ++i) {
        v[i] = coin(rng) ? 1.0 : -1.0;
        for (int j = 0; j < opt.dim; ++j) U(i, j) = v[i] * mean[j] + normal(rng);
      }
      return (v.array() > 0).any() && (v.array() < 0).any();
    };
    const bool train_ok = draw(opt.n_train, d.U_train, d.v_train);
    const bool val_ok = draw(opt.n_val, d.U_val, d.v_val);
    if (!train_ok || !val_ok) continue;
    std::vector<int> order(opt.n_train);
    for (int i = 0; i < opt.n_train; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const int flips = static_cast<int>(std::lround(opt.corruption_rate * opt.n_train));
    d.corrupted.assign(opt.n_train, false);
    for (int i = 0; i < flips; ++i) {
      d.corrupted[order[i]] = true;
      d.v_train[order[i]] = -d.v_train[order[i]];
    }
    return d;
  }
  throw InvalidParameter("hyperclean: 10 draws in a row had a single class");
}

namespace {

// Maps network parameters to the effective linear classifier (w, b).
Vector effective_params(const HypercleanOptions& o, const Vector& y) {
  if (o.hidden == 0) return y;
  const int d = o.dim, h = o.hidden;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      W1(y.data(), h, d);
  const auto w2 = y.segment(h * d, h);
  Vector eff(d + 1);
  eff.head(d) = W1.transpose() * w2;
  eff[d] = y[h * d + h];
  return eff;
}

// Pulls a gradient in (w, b) back to the network parameters.
Vector pull_back(const HypercleanOptions& o, const Vector& y, const Vector& g_eff) {
  if (o.hidden == 0) return g_eff;
  const int d = o.dim, h = o.hidden;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      W1(y.data(), h, d);
  const auto w2 = y.segment(h * d, h);
  Vector g(y.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gW1(
      g.data(), h, d);
  gW1 = w2 * g_eff.head(d).transpose();
  g.segment(h * d, h) = W1 * g_eff.head(d);
  g[h * d + h] = g_eff[d];
  return g;
}

int param_count(const HypercleanOptions& o) {
  return o.hidden == 0 ? o.dim + 1 : o.hidden * o.dim + o.hidden + 1;
}

}  // namespace

Vector hyperclean_weights(const HypercleanData& d, const Vector& x) {
  if (d.options.box) return x;
  return x.unaryExpr([](double t) { return kernels::sigmoid(t); });
}

double hyperclean_val_loss(const HypercleanData& d, const Vector& y) {
  const Vector eff = effective_params(d.options, y);
  return kernels::logistic_weighted(d.U_val, d.v_val, eff, Vector::Ones(d.v_val.size()),
                                    nullptr) /
         static_cast<double>(d.v_val.size());
}

double hyperclean_val_accuracy(const HypercleanData& d, const Vector& y) {
  const Vector eff = effective_params(d.options, y);
  const int dim = d.options.dim;
  const Vector score = (d.U_val * eff.head(dim)).array() + eff[dim];
  int correct = 0;
  for (Eigen::Index i = 0; i < score.size(); ++i) {
    if (score[i] * d.v_val[i] > 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(score.size());
}

BenchmarkProblem make_hyperclean_problem(const HypercleanOptions& opt) {
  auto data = std::make_shared<const HypercleanData>(make_hyperclean_data(opt));
  const int m = opt.n_train;
  const int n = param_count(opt);
  const double ridge = opt.ridge;
  const HypercleanOptions o = opt;

  BenchmarkProblem b;
  b.name = "hyperclean";
  b.hyperclean = data;
  b.params = {{"seed", static_cast<double>(data->seed_used)},
              {"n_train", opt.n_train},
              {"n_val", opt.n_val},
              {"dim", opt.dim},
              {"rate", opt.corruption_rate},
              {"box", opt.box ? 1.0 : 0.0},
              {"hidden", opt.hidden}};
  BilevelProblem& p = b.problem;
  p.m = m;
  p.n = n;
  p.f_lower_bound = 0.0;

  p.F.eval = [data, o, m, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, m, n, "hyperclean UL");
    return kernels::logistic_weighted(data->U_val, data->v_val, effective_params(o, y),
                                      Vector::Ones(data->v_val.size()), nullptr);
  };
  p.F.grad_x = [m](const Vector&, const Vector&) -> Vector { return Vector::Zero(m); };
  p.F.grad_y = [data, o, m, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, m, n, "hyperclean UL");
    Vector g;
    kernels::logistic_weighted(data->U_val, data->v_val, effective_params(o, y),
                               Vector::Ones(data->v_val.size()), &g);
    return pull_back(o, y, g);
  };

  auto weights = [data](const Vector& x) { return hyperclean_weights(*data, x); };
  p.f.eval = [data, o, m, n, ridge, weights](const Vector& x, const Vector& y) {
    require_sizes(x, y, m, n, "hyperclean LL");
    return kernels::logistic_weighted(data->U_train, data->v_train, effective_params(o, y),
                                      weights(x), nullptr) +
           0.5 * ridge * y.squaredNorm();
  };
  p.f.grad_y = [data, o, m, n, ridge, weights](const Vector& x, const Vector& y) {
    require_sizes(x, y, m, n, "hyperclean LL");
    Vector g;
    kernels::logistic_weighted(data->U_train, data->v_train, effective_params(o, y),
                               weights(x), &g);
    return Vector(pull_back(o, y, g) + ridge * y);
  };
  p.f.eval_grad_y = [data, o, m, n, ridge, weights](const Vector& x, const Vector& y,
                                                    Vector& gy) {
    require_sizes(x, y, m, n, "hyperclean LL");
    Vector g;
    const double v = kernels::logistic_weighted(data->U_train, data->v_train,
                                                effective_params(o, y), weights(x), &g);
    gy = pull_back(o, y, g) + ridge * y;
    return v + 0.5 * ridge * y.squaredNorm();
  };
  p.f.grad_x = [data, o, m, n](const Vector& x, const Vector& y) {
    require_sizes(x, y, m, n, "hyperclean LL");
    Vector losses;
    kernels::logistic_losses(data->U_train, data->v_train, effective_params(o, y), losses);
    if (o.box) return losses;
    const Vector s = x.unaryExpr([](double t) { return kernels::sigmoid(t); });
    return Vector(losses.array() * s.array() * (1.0 - s.array()));
  };

  if (opt.box) {
    p.ul_set = FeasibleSet::box(Vector::Zero(m), Vector::Ones(m));
    for (int i = 0; i < m; ++i) {
      ScalarField H;
      H.eval = [i](const Vector& x, const Vector&) {
        const double u = x[i] - 0.5;
        return u * u - 0.25;
      };
      H.grad_x = [i, m](const Vector& x, const Vector&) {
        Vector g = Vector::Zero(m);
        g[i] = 2.0 * (x[i] - 0.5);
        return g;
      };
      H.grad_y = [n](const Vector&, const Vector&) -> Vector { return Vector::Zero(n); };
      p.ul_constraints.push_back(std::move(H));
    }
    b.x0_hint = Vector::Constant(m, 0.5);
  } else {
    p.ul_set = FeasibleSet::whole_space(m);
    b.x0_hint = Vector::Zero(m);
  }
  b.y0_hint = Vector::Zero(n);
  if (opt.hidden > 0) {
    // a zero start is a saddle of the factored model
    std::mt19937_64 rng(data->seed_used ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int i = 0; i < n - 1; ++i) b.y0_hint[i] = normal(rng);
  }
  return b;
}

double brute_force_phi(const BilevelProblem& p, const Vector& x, const GridSpec& grid) {
  if (p.n > 2) throw InvalidParameter("brute_force_phi handles n <= 2 only");
  if (grid.points < 2 || !(grid.hi > grid.lo)) throw InvalidParameter("bad grid");
  const double h = (grid.hi - grid.lo) / (grid.points - 1);
  const long total = p.n == 1 ? grid.points : static_cast<long>(grid.points) * grid.points;
  auto point = [&](long idx) {
    Vector y(p.n);
    if (p.n == 1) {
      y[0] = grid.lo + h * static_cast<double>(idx);
    } else {
      y[0] = grid.lo + h * static_cast<double>(idx / grid.points);
      y[1] = grid.lo + h * static_cast<double>(idx % grid.points);
    }
    return y;
  };
  std::vector<double> fv(total, std::numeric_limits<double>::infinity());
  double fmin = std::numeric_limits<double>::infinity();
  for (long i = 0; i < total; ++i) {
    const Vector y = point(i);
    bool feasible = true;
    for (const auto& c : p.ll_constraints) {
      if (c.eval(x, y) > 0.0) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    fv[i] = p.f.eval(x, y);
    fmin = std::min(fmin, fv[i]);
  }
  if (!std::isfinite(fmin)) throw EmptyFeasibleSet("no grid point satisfies the LL constraints");
  const double thr = fmin + grid.tol * std::max(1.0, std::abs(fmin));
  const bool pess = p.mode == Mode::Pessimistic;
  double best = pess ? -std::numeric_limits<double>::infinity()
                     : std::numeric_limits<double>::infinity();
  for (long i = 0; i < total; ++i) {
    if (!(fv[i] <= thr)) continue;
    const double F = p.F.eval(x, point(i));
    best = pess ? std::max(best, F) : std::min(best, F);
  }
  return best;
}

namespace {

// Golden-section minimum of fn on [a, b]; infinite values count as large.
double golden_min(const std::function<double(double)>& fn, double a, double b, double* arg) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = fn(c), fd = fn(d);
  for (int it = 0; it < 120 && b - a > 1e-13; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = fn(d);
    }
  }
  const double best = std::min(fc, fd);
  if (arg) *arg = fc <= fd ? c : d;
  return best;
}

double grid_then_refine(const std::function<double(double)>& fn, const GridSpec& grid,
                        const std::vector<double>& extra, double* arg) {
  const double h = (grid.hi - grid.lo) / (grid.points - 1);
  double best = std::numeric_limits<double>::infinity();
  double at = grid.lo;
  for (int i = 0; i < grid.points; ++i) {
    const double y = grid.lo + h * i;
    const double v = fn(y);
    if (v < best) {
      best = v;
      at = y;
    }
  }
  for (double y : extra) {
    const double v = fn(y);
    if (v < best) {
      best = v;
      at = y;
    }
  }
  double refined_at = at;
  const double refined = golden_min(fn, at - h, at + h, &refined_at);
  if (refined < best) {
    best = refined;
    at = refined_at;
  }
  if (arg) *arg = at;
  return best;
}

}  // namespace

double dense_penalized_phi(const BilevelProblem& p, const Vector& x,
                           const ScheduleState& sched, const AuxiliaryFunction& aux_f,
                           const GridSpec& grid) {
  if (p.n != 1) throw InvalidParameter("dense_penalized_phi handles n = 1 only");
  if (p.constrained()) throw InvalidParameter("dense_penalized_phi: unconstrained problems only");
  if (p.mode != Mode::Optimistic) throw InvalidParameter("dense_penalized_phi: optimistic only");
  const double mu = sched.mu.value, theta = sched.theta.value;
  Vector y(1);
  auto reg = [&](double t) {
    y[0] = t;
    return p.f.eval(x, y) + 0.5 * mu * t * t;
  };
  double z = 0.0;
  const double fstar = grid_then_refine(reg, grid, {}, &z);
  auto pen = [&](double t) {
    y[0] = t;
    const ExtendedReal P =
        aux_value(aux_f, p.f.eval(x, y) - fstar, sched.sigma1.value, sched.sigma2.value);
    if (P.is_infinite()) return std::numeric_limits<double>::infinity();
    return p.F.eval(x, y) + P.value() + 0.5 * theta * t * t;
  };
  return grid_then_refine(pen, grid, {z}, nullptr);
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& body, const std::string& whole) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidParameter("expected key=value in problem spec: " + whole);
    }
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

double take(std::map<std::string, std::string>& kv, const std::string& key, double def,
            const std::string& whole) {
  const auto it = kv.find(key);
  if (it == kv.end()) return def;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    kv.erase(it);
    return v;
  } catch (const std::exception&) {
    throw InvalidParameter("bad value for '" + key + "' in " + whole);
  }
}

int take_int(std::map<std::string, std::string>& kv, const std::string& key, int def,
             const std::string& whole) {
  const double v = take(kv, key, def, whole);
  if (v != std::floor(v)) throw InvalidParameter("'" + key + "' must be an integer in " + whole);
  return static_cast<int>(v);
}

}  // namespace

BenchmarkProblem make_problem(const std::string& spec) {
  std::string family = spec, body;
  if (const auto colon = spec.find(':'); colon != std::string::npos) {
    family = spec.substr(0, colon);
    body = spec.substr(colon + 1);
  }
  auto kv = parse_kv(body, spec);
  BenchmarkProblem b;
  if (family == "sin" || family == "sin-pessimistic" || family == "sin-constrained") {
    const int n = take_int(kv, "n", 2, spec);
    const double a = take(kv, "a", 2.0, spec);
    const double c = take(kv, "c", family == "sin-constrained" ? 1.0 : 2.0, spec);
    if (n < 1) throw InvalidParameter("n must be >= 1 in " + spec);
    const Vector cv = Vector::Constant(n, c);
    if (family == "sin") b = make_sin_problem(n, a, cv);
    else if (family == "sin-pessimistic") b = make_pessimistic_sin_problem(n, a, cv);
    else b = make_constrained_sin_problem(n, a, cv);
    b.params["c"] = c;
  } else if (family == "hyperclean") {
    HypercleanOptions o;
    o.seed = static_cast<std::uint64_t>(take(kv, "seed", 1.0, spec));
    o.n_train = take_int(kv, "n_train", o.n_train, spec);
    o.n_val = take_int(kv, "n_val", o.n_val, spec);
    o.dim = take_int(kv, "dim", o.dim, spec);
    o.corruption_rate = take(kv, "rate", o.corruption_rate, spec);
    o.separation = take(kv, "sep", o.separation, spec);
    o.ridge = take(kv, "ridge", o.ridge, spec);
    o.box = take_int(kv, "box", 0, spec) != 0;
    o.hidden = take_int(kv, "hidden", 0, spec);
    b = make_hyperclean_problem(o);
  } else {
    throw InvalidParameter("unknown problem family: " + family);
  }
  if (!kv.empty()) {
    throw InvalidParameter("unknown key '" + kv.begin()->first + "' in " + spec);
  }
  return b;
}

std::vector<std::string> problem_families() {
  return {"sin:n=2,a=2,c=2", "sin-constrained:n=2,a=2,c=1", "sin-pessimistic:n=2,a=2,c=2",
          "hyperclean:seed=1,n_train=100,n_val=100,dim=2,rate=0.5,sep=2,ridge=0.001,box=0,"
          "hidden=0"};
}

}  // namespace bvfsm
