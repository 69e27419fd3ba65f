// Serial reference vs OpenMP path for the objective kernels.

#include "bvfsm/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using bvfsm::Vector;
using bvfsm::kernels::Exec;

Vector random_vector(Eigen::Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (auto& e : v) e = g(rng);
  return v;
}

void BM_SinField(benchmark::State& state, Exec exec) {
  const Eigen::Index n = state.range(0);
  const Vector y = random_vector(n, 1);
  const Vector c = random_vector(n, 2);
  Vector grad(n);
  for (auto _ : state) {
    auto s = bvfsm::kernels::sin_field(0.3, y, c, &grad, exec);
    benchmark::DoNotOptimize(s);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_LogisticWeighted(benchmark::State& state, Exec exec) {
  const Eigen::Index n = state.range(0);
  const int dim = 8;
  Eigen::MatrixXd U(n, dim);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < U.size(); ++i) U.data()[i] = g(rng);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = i % 2 ? 1.0 : -1.0;
  const Vector params = random_vector(dim + 1, 4);
  const Vector weights = Vector::Constant(n, 0.5);
  Vector grad(dim + 1);
  for (auto _ : state) {
    double loss = bvfsm::kernels::logistic_weighted(U, v, params, weights, &grad, exec);
    benchmark::DoNotOptimize(loss);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK_CAPTURE(BM_SinField, serial, Exec::Serial)->RangeMultiplier(10)->Range(1000, 1000000);
BENCHMARK_CAPTURE(BM_SinField, parallel, Exec::Parallel)->RangeMultiplier(10)->Range(1000, 1000000);
BENCHMARK_CAPTURE(BM_LogisticWeighted, serial, Exec::Serial)->RangeMultiplier(10)->Range(1000, 1000000);
BENCHMARK_CAPTURE(BM_LogisticWeighted, parallel, Exec::Parallel)->RangeMultiplier(10)->Range(1000, 1000000);

BENCHMARK_MAIN();
