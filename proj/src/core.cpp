#include "bvfsm/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace bvfsm {

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw NonFiniteEvaluation(std::string("non-finite value in ") + what);
  }
}

double require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NonFiniteEvaluation(std::string("non-finite value in ") + what);
  }
  return v;
}

double ScalarField::value_and_grad_y(const Vector& x, const Vector& y, Vector& gy) const {
  if (eval_grad_y) return eval_grad_y(x, y, gy);
  gy = grad_y(x, y);
  return eval(x, y);
}

FeasibleSet FeasibleSet::whole_space(int dim) {
  if (dim < 0) throw InvalidParameter("FeasibleSet: negative dimension");
  return FeasibleSet(Kind::WholeSpace, dim);
}

FeasibleSet FeasibleSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size()) {
    throw DimensionMismatch("FeasibleSet::box: bound sizes differ");
  }
  if ((lower.array() > upper.array()).any()) {
    throw InvalidParameter("FeasibleSet::box: lower > upper");
  }
  FeasibleSet s(Kind::Box, static_cast<int>(lower.size()));
  s.a_ = std::move(lower);
  s.b_ = std::move(upper);
  return s;
}

FeasibleSet FeasibleSet::ball(Vector center, double radius) {
  if (!(radius > 0.0)) throw InvalidParameter("FeasibleSet::ball: radius <= 0");
  FeasibleSet s(Kind::Ball, static_cast<int>(center.size()));
  s.a_ = std::move(center);
  s.radius_ = radius;
  return s;
}

Vector FeasibleSet::project(const Vector& x) const {
  if (x.size() != dim_) {
    std::ostringstream os;
    os << "project: point has dimension " << x.size() << ", set has " << dim_;
    throw DimensionMismatch(os.str());
  }
  switch (kind_) {
    case Kind::WholeSpace:
      return x;
    case Kind::Box:
      return x.cwiseMax(a_).cwiseMin(b_);
    case Kind::Ball: {
      const Vector d = x - a_;
      const double r = d.norm();
      if (r <= radius_) return x;
      return a_ + d * (radius_ / r);
    }
  }
  return x;
}

bool FeasibleSet::contains(const Vector& x, double tol) const {
  if (x.size() != dim_) return false;
  switch (kind_) {
    case Kind::WholeSpace:
      return true;
    case Kind::Box:
      return ((x.array() >= a_.array() - tol) && (x.array() <= b_.array() + tol))
          .all();
    case Kind::Ball:
      return (x - a_).norm() <= radius_ * (1.0 + tol) + tol;
  }
  return false;
}

Vector project(const FeasibleSet& set, const Vector& x) { return set.project(x); }

void BilevelProblem::check() const {
  if (m < 1 || n < 1) throw InvalidParameter("BilevelProblem: m, n must be >= 1");
  if (!F.valid() || !f.valid()) {
    throw InvalidParameter("BilevelProblem: F and f need eval, grad_x, grad_y");
  }
  for (const auto& c : ul_constraints) {
    if (!c.valid()) throw InvalidParameter("BilevelProblem: incomplete UL constraint");
  }
  for (const auto& c : ll_constraints) {
    if (!c.valid()) throw InvalidParameter("BilevelProblem: incomplete LL constraint");
  }
  if (ul_set.dim() != m) {
    throw DimensionMismatch("BilevelProblem: UL feasible set dimension != m");
  }
}

Vector fd_gradient(const std::function<double(const Vector&)>& fn,
                   const Vector& x, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("fd_gradient: eps must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    probe[i] = xi + eps;
    const double up = require_finite(fn(probe), "fd_gradient");
    probe[i] = xi - eps;
    const double down = require_finite(fn(probe), "fd_gradient");
    probe[i] = xi;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

Vector hvp(const std::function<Vector(const Vector&)>& grad_fn, const Vector& x,
           const Vector& v, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("hvp: eps must be > 0");
  require_finite(v, "hvp direction");
  const Vector up = grad_fn(x + eps * v);
  require_finite(up, "hvp gradient");
  const Vector down = grad_fn(x - eps * v);
  require_finite(down, "hvp gradient");
  return (up - down) / (2.0 * eps);
}

namespace {

double block_rel_err(const Vector& analytic, const Vector& fd) {
  const double scale = std::max(analytic.norm(), fd.norm());
  if (scale < 1e-10) return 0.0;
  return (analytic - fd).norm() / scale;
}

}  // namespace

GradientReport validate_gradients(const ScalarField& field, int m, int n,
                                  int probes, double tol, std::uint64_t seed,
                                  double scale, double eps) {
  if (probes < 1) throw InvalidParameter("validate_gradients: probes must be >= 1");
  if (!field.valid()) throw InvalidParameter("validate_gradients: incomplete field");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  GradientReport report;
  report.probes = probes;
  report.tol = tol;
  for (int p = 0; p < probes; ++p) {
    Vector x(m), y(n);
    for (auto& v : x) v = normal(rng);
    for (auto& v : y) v = normal(rng);
    const Vector gx = field.grad_x(x, y);
    const Vector gy = field.grad_y(x, y);
    const Vector fx = fd_gradient([&](const Vector& xx) { return field.eval(xx, y); }, x, eps);
    const Vector fy = fd_gradient([&](const Vector& yy) { return field.eval(x, yy); }, y, eps);
    report.max_rel_err_x = std::max(report.max_rel_err_x, block_rel_err(gx, fx));
    report.max_rel_err_y = std::max(report.max_rel_err_y, block_rel_err(gy, fy));
  }
  report.passed = report.max_rel_err_x <= tol && report.max_rel_err_y <= tol;
  return report;
}

}  // namespace bvfsm
