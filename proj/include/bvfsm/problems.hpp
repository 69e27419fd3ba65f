#pragma once

// Benchmark registry: the sine-coupled toy problems with closed-form
// solutions, a synthetic hyper-cleaning task, and grid oracles.

#include "bvfsm/auxfun.hpp"
#include "bvfsm/core.hpp"
#include "bvfsm/solver.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bvfsm {

struct HypercleanData;

struct BenchmarkProblem {
  std::string name;
  BilevelProblem problem;
  std::optional<Reference> reference;
  std::map<std::string, double> params;
  /// Suggested starting points (empty when the caller should choose).
  Vector x0_hint;
  Vector y0_hint;
  std::shared_ptr<const HypercleanData> hyperclean;
};

struct SinSolution {
  double x_star = 0.0;
  Vector y_star;
  double F_star = 0.0;
  double C = 0.0;
  long k = 0;
  /// Two lattice points were equally close to 2a; the smaller k was taken.
  bool tie = false;
};

/// Closed-form optimum of the sine problem: C = -pi/2 + 2 pi k nearest 2a,
/// x* = ((1 - n) a + n C) / (1 + n), y*_i = C + c_i - x*,
/// F* = n (C - 2a)^2 / (1 + n).
SinSolution sin_solution(int n, double a, const Vector& c);

/// F = (x - a)^2 + |y - a - c|^2, f = sum_i sin(x + y_i - c_i), m = 1.
BenchmarkProblem make_sin_problem(int n, double a, const Vector& c);
/// F = (x - a)^2 + |y - a|^2, same f, LL constraints
/// h_i = (x + y_i - 1/2)^2 - 1/4 <= 0. Requires c in [0, 1]^n.
BenchmarkProblem make_constrained_sin_problem(int n, double a, const Vector& c);
/// F = (x - a)^2 - |y - a - c|^2 in pessimistic mode, f as in the sine problem.
BenchmarkProblem make_pessimistic_sin_problem(int n, double a, const Vector& c);

struct HypercleanOptions {
  std::uint64_t seed = 1;
  int n_train = 100;
  int n_val = 100;
  int dim = 2;
  double corruption_rate = 0.5;
  /// Distance of each blob mean from the origin along (1, ..., 1)/sqrt(dim).
  double separation = 2.0;
  /// Ridge term ridge/2 |y|^2 added to the LL loss.
  double ridge = 1e-3;
  /// Weights are x in Box([0,1]) with explicit constraints instead of sigmoid(x).
  bool box = false;
  /// Two-layer linear network with this many hidden units; 0 keeps one layer.
  int hidden = 0;
};

struct HypercleanData {
  Eigen::MatrixXd U_train;
  Vector v_train;  // labels in {-1, +1}, after corruption
  Eigen::MatrixXd U_val;
  Vector v_val;
  std::vector<bool> corrupted;
  std::uint64_t seed_used = 0;
  int attempts = 0;
  HypercleanOptions options;
};

/// Two Gaussian blobs; round(rate * n_train) training labels are flipped.
/// A draw with a single class in either split is retried with seed + 1, up
/// to 10 attempts.
HypercleanData make_hyperclean_data(const HypercleanOptions& opt);
BenchmarkProblem make_hyperclean_problem(const HypercleanOptions& opt);

/// Per-sample weights implied by x: sigmoid(x), or x itself for the box form.
Vector hyperclean_weights(const HypercleanData& d, const Vector& x);
/// Mean validation loss of the classifier y.
double hyperclean_val_loss(const HypercleanData& d, const Vector& y);
/// Fraction of validation samples classified correctly.
double hyperclean_val_accuracy(const HypercleanData& d, const Vector& y);

struct GridSpec {
  double lo = -20.0;
  double hi = 20.0;
  int points = 2001;
  /// y belongs to S(x) when f(x, y) <= min f + tol * max(1, |min f|).
  double tol = 1e-3;
};

/// phi(x) = min (max, pessimistic) of F over the grid points of S(x), with S(x)
/// restricted to points satisfying every LL constraint. n <= 2.
double brute_force_phi(const BilevelProblem& p, const Vector& x, const GridSpec& grid = {});

/// min_y F + P(f - f*_mu) + theta/2 |y|^2 for n = 1 by dense grid search with
/// golden-section refinement, f*_mu found the same way. Optimistic only.
double dense_penalized_phi(const BilevelProblem& p, const Vector& x,
                           const ScheduleState& sched, const AuxiliaryFunction& aux_f,
                           const GridSpec& grid = {});

/// Registry lookup: "sin:n=2,a=2,c=2", "sin-constrained:n=2,a=2,c=1",
/// "sin-pessimistic:...", "hyperclean:seed=1,n_train=100,n_val=100,dim=2,
/// rate=0.5,box=0,hidden=0". Scalar c is broadcast.
BenchmarkProblem make_problem(const std::string& spec);
std::vector<std::string> problem_families();

}  // namespace bvfsm
