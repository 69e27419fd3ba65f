#pragma once

// Problem definition, gradient oracles and feasible-set projections shared by
// the BVFSM solver, the hypergradient baselines and the benchmark registry.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bvfsm {

using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteEvaluation : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A descent step could not be moved off an infinite barrier value.
class BarrierWall : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class EmptyFeasibleSet : public Error {
 public:
  using Error::Error;
};

/// Throws NonFiniteEvaluation naming `what` if any entry is NaN or Inf.
void require_finite(const Vector& v, const char* what);
double require_finite(double v, const char* what);

/// A real-valued function of (x, y) with analytic partial gradients.
struct ScalarField {
  std::function<double(const Vector&, const Vector&)> eval;
  std::function<Vector(const Vector&, const Vector&)> grad_x;
  std::function<Vector(const Vector&, const Vector&)> grad_y;
  /// Optional one-pass value and y-gradient; falls back to eval + grad_y.
  std::function<double(const Vector&, const Vector&, Vector&)> eval_grad_y;

  [[nodiscard]] bool valid() const { return eval && grad_x && grad_y; }
  double value_and_grad_y(const Vector& x, const Vector& y, Vector& gy) const;
};

/// X in the upper-level problem. Membership, not an indicator value.
class FeasibleSet {
 public:
  enum class Kind { WholeSpace, Box, Ball };

  static FeasibleSet whole_space(int dim);
  static FeasibleSet box(Vector lower, Vector upper);
  static FeasibleSet ball(Vector center, double radius);

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] const Vector& lower() const { return a_; }
  [[nodiscard]] const Vector& upper() const { return b_; }
  [[nodiscard]] const Vector& center() const { return a_; }
  [[nodiscard]] double radius() const { return radius_; }

  [[nodiscard]] Vector project(const Vector& x) const;
  [[nodiscard]] bool contains(const Vector& x, double tol = 0.0) const;

 private:
  FeasibleSet(Kind kind, int dim) : kind_(kind), dim_(dim) {}

  Kind kind_;
  int dim_;
  Vector a_;  // Box lower or Ball center
  Vector b_;  // Box upper
  double radius_ = 0.0;
};

/// Free-function spelling of FeasibleSet::project.
Vector project(const FeasibleSet& set, const Vector& x);

enum class Mode { Optimistic, Pessimistic };

/// min_x F(x, y) subject to y in argmin_y f(x, y), with optional functional
/// constraints H_j(x, y) <= 0 on the upper level and h_j(x, y) <= 0 on the
/// lower level. In pessimistic mode the upper level maximizes F over the
/// lower-level solution set instead.
///
/// Level-boundedness of f in y (locally uniformly in x) is a user
/// obligation and is not checked.
struct BilevelProblem {
  int m = 0;
  int n = 0;
  ScalarField F;
  ScalarField f;
  std::vector<ScalarField> ul_constraints;
  std::vector<ScalarField> ll_constraints;
  FeasibleSet ul_set = FeasibleSet::whole_space(0);
  Mode mode = Mode::Optimistic;
  /// Known lower bound of f, used by the dynamic modified-barrier offset.
  std::optional<double> f_lower_bound;

  /// Throws InvalidParameter / DimensionMismatch on malformed problems.
  void check() const;
  [[nodiscard]] bool constrained() const {
    return !ul_constraints.empty() || !ll_constraints.empty();
  }
};

/// Central differences: entry i is (fn(x + eps e_i) - fn(x - eps e_i)) / 2eps.
Vector fd_gradient(const std::function<double(const Vector&)>& fn,
                   const Vector& x, double eps = 1e-5);

/// Symmetric difference of gradients along v, approximating H(x) v.
Vector hvp(const std::function<Vector(const Vector&)>& grad_fn, const Vector& x,
           const Vector& v, double eps = 1e-5);

struct GradientReport {
  int probes = 0;
  double max_rel_err_x = 0.0;
  double max_rel_err_y = 0.0;
  double tol = 0.0;
  bool passed = true;
};

/// Compares analytic grad_x / grad_y against fd_gradient at `probes` random
/// points drawn from N(0, scale^2) in each coordinate.
GradientReport validate_gradients(const ScalarField& field, int m, int n,
                                  int probes, double tol,
                                  std::uint64_t seed = 0x5eed,
                                  double scale = 1.0, double eps = 1e-5);

}  // namespace bvfsm
