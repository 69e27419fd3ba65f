#pragma once

// Elementwise kernels behind the benchmark objectives. Each has a serial
// reference and an OpenMP path; reductions use fixed-size blocks summed in
// block order, so both paths return identical bits whatever the thread count.

#include "bvfsm/core.hpp"

namespace bvfsm::kernels {

enum class Exec { Serial, Parallel, Auto };

/// Auto switches to Parallel at or above this many elements.
inline constexpr Eigen::Index kParallelThreshold = 16384;
inline constexpr Eigen::Index kBlock = 2048;

/// True when the library was built with OpenMP.
bool parallel_available();
int max_threads();

struct SinSums {
  double sin_sum = 0.0;  // sum_i sin(x + y_i - c_i)
  double cos_sum = 0.0;  // sum_i cos(x + y_i - c_i)
};

/// Fills grad_y_i = cos(x + y_i - c_i) (when grad_y is non-null) and returns
/// both sums in one pass. With with_sin = false the sine sum is left at 0.
SinSums sin_field(double x, const Vector& y, const Vector& c, Vector* grad_y,
                  Exec exec = Exec::Auto, bool with_sin = true);

/// Per-sample logistic losses log(1 + exp(-v_i (u_i . w + b))) with
/// params = (w, b).
void logistic_losses(const Eigen::MatrixXd& U, const Vector& v, const Vector& params,
                     Vector& out, Exec exec = Exec::Auto);

/// sum_i weights_i * loss_i and its gradient in params.
double logistic_weighted(const Eigen::MatrixXd& U, const Vector& v,
                         const Vector& params, const Vector& weights,
                         Vector* grad, Exec exec = Exec::Auto);

/// Numerically stable log(1 + exp(t)).
double softplus(double t);
double sigmoid(double t);

}  // namespace bvfsm::kernels
