#include "bvfsm/kernels.hpp"

#include <cmath>
#include <vector>

#ifdef BVFSM_HAVE_OPENMP
#include <omp.h>
#endif

namespace bvfsm::kernels {

bool parallel_available() {
#ifdef BVFSM_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef BVFSM_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

bool use_parallel(Exec exec, Eigen::Index n) {
  if (!parallel_available()) return false;
  switch (exec) {
    case Exec::Serial: return false;
    case Exec::Parallel: return true;
    case Exec::Auto: return n >= kParallelThreshold;
  }
  return false;
}

Eigen::Index block_count(Eigen::Index n) { return (n + kBlock - 1) / kBlock; }

}  // namespace

double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

SinSums sin_field(double x, const Vector& y, const Vector& c, Vector* grad_y, Exec exec,
                  bool with_sin) {
  const Eigen::Index n = y.size();
  if (c.size() != n) throw DimensionMismatch("sin_field: y and c differ in size");
  if (grad_y && grad_y->size() != n) grad_y->resize(n);
  const Eigen::Index nb = block_count(n);
  std::vector<double> ps(nb, 0.0), pc(nb, 0.0);
  const double* yp = y.data();
  const double* cp = c.data();
  double* gp = grad_y ? grad_y->data() : nullptr;
  const bool par = use_parallel(exec, n);
  (void)par;
#ifdef BVFSM_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Eigen::Index lo = b * kBlock;
    const Eigen::Index hi = std::min(n, lo + kBlock);
    double s = 0.0, co = 0.0;
    for (Eigen::Index i = lo; i < hi; ++i) {
      const double t = x + yp[i] - cp[i];
      const double ci = std::cos(t);
      if (with_sin) s += std::sin(t);
      co += ci;
      if (gp) gp[i] = ci;
    }
    ps[b] = s;
    pc[b] = co;
  }
  SinSums out;
  for (Eigen::Index b = 0; b < nb; ++b) {
    out.sin_sum += ps[b];
    out.cos_sum += pc[b];
  }
  return out;
}

namespace {

void check_logistic(const Eigen::MatrixXd& U, const Vector& v, const Vector& params) {
  if (v.size() != U.rows()) throw DimensionMismatch("logistic: labels vs rows");
  if (params.size() != U.cols() + 1) throw DimensionMismatch("logistic: params size");
}

}  // namespace

void logistic_losses(const Eigen::MatrixXd& U, const Vector& v, const Vector& params,
                     Vector& out, Exec exec) {
  check_logistic(U, v, params);
  const Eigen::Index N = U.rows();
  const Eigen::Index d = U.cols();
  out.resize(N);
  const auto w = params.head(d);
  const double b = params[d];
  const bool par = use_parallel(exec, N * (d + 1));
  (void)par;
#ifdef BVFSM_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (Eigen::Index i = 0; i < N; ++i) {
    out[i] = softplus(-v[i] * (U.row(i).dot(w) + b));
  }
}

double logistic_weighted(const Eigen::MatrixXd& U, const Vector& v,
                         const Vector& params, const Vector& weights,
                         Vector* grad, Exec exec) {
  check_logistic(U, v, params);
  const Eigen::Index N = U.rows();
  const Eigen::Index d = U.cols();
  if (weights.size() != N) throw DimensionMismatch("logistic: weights vs rows");
  const auto w = params.head(d);
  const double b = params[d];
  const Eigen::Index nb = block_count(N);
  std::vector<double> pv(nb, 0.0);
  Eigen::MatrixXd pg = Eigen::MatrixXd::Zero(d + 1, grad ? nb : 0);
  const bool par = use_parallel(exec, N * (d + 1));
  (void)par;
#ifdef BVFSM_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (Eigen::Index blk = 0; blk < nb; ++blk) {
    const Eigen::Index lo = blk * kBlock;
    const Eigen::Index hi = std::min(N, lo + kBlock);
    double acc = 0.0;
    for (Eigen::Index i = lo; i < hi; ++i) {
      const double m = -v[i] * (U.row(i).dot(w) + b);
      acc += weights[i] * softplus(m);
      if (grad) {
        // d/dparams softplus(m) = sigmoid(m) * (-v_i) * (u_i, 1)
        const double s = -weights[i] * v[i] * sigmoid(m);
        pg.col(blk).head(d).noalias() += s * U.row(i).transpose();
        pg(d, blk) += s;
      }
    }
    pv[blk] = acc;
  }
  double total = 0.0;
  for (Eigen::Index blk = 0; blk < nb; ++blk) total += pv[blk];
  if (grad) {
    grad->setZero(d + 1);
    for (Eigen::Index blk = 0; blk < nb; ++blk) *grad += pg.col(blk);
  }
  return total;
}

}  // namespace bvfsm::kernels
