#pragma once

// Experiment plumbing behind the command-line runner: JSON configs, method
// runs written as CSV traces plus a JSON summary, dimension sweeps and
// per-step timing.

#include "bvfsm/baselines.hpp"
#include "bvfsm/problems.hpp"
#include "bvfsm/solver.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bvfsm {

const char* version();

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct MethodSpec {
  /// Unique within a config; names the trace file.
  std::string label;
  bool is_bvfsm = true;
  SolverConfig solver;
  BaselineConfig baseline;
  int K = 1000;
  /// The UL step is divided by n + 1, so one setting serves a dimension sweep.
  bool alpha_per_dim = false;

  [[nodiscard]] std::string method_name() const;
  /// Copy with alpha_per_dim resolved for an LL dimension n.
  [[nodiscard]] MethodSpec for_dimension(int n) const;
};

struct SweepSpec {
  std::string family = "sin";
  /// Extra registry parameters appended after n, e.g. "a=2,c=2".
  std::string params;
  std::vector<int> n_list;
};

struct TimingSpec {
  std::string family = "sin";
  std::string params;
  std::vector<std::pair<int, int>> sizes;  // (m, n)
  int repeats = 5;
};

struct ExperimentConfig {
  std::string problem;
  std::vector<MethodSpec> methods;
  /// One entry is broadcast; empty uses the problem's hint, then zeros.
  std::vector<double> x0;
  std::vector<double> y0;
  std::uint64_t seed = 1;
  std::string out_dir = "bvfsm-out";
  double wall_clock_cap_s = 0.0;
  SweepSpec sweep;
  TimingSpec timing;

  /// Throws ConfigError on unknown keys, bad values, unresolvable names or
  /// an empty method list.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  /// Normalized echo; from_json(to_json()) reproduces the config.
  [[nodiscard]] nlohmann::json to_json() const;
};

ExperimentConfig load_config(const std::string& path);

/// Registry lookup that appends seed= to hyperclean names lacking one.
BenchmarkProblem resolve_problem(const std::string& name, std::uint64_t seed);

/// Start point of dimension `dim` from a spec as in ExperimentConfig::x0.
Vector resolve_start(const std::vector<double>& spec, int dim, const Vector& hint);

/// Runs one method; throws SolveFailure (with the partial trace) on failure.
SolveTrace run_method(const BenchmarkProblem& bp, const MethodSpec& spec,
                      const Vector& x0, const Vector& y0, double wall_clock_cap_s);

/// Columns k,l,wall_time_s,F,f,ul_grad_norm,rel_err_x,rel_err_F; missing
/// errors are written as nan.
void write_trace_csv(const std::string& path, const SolveTrace& trace);

struct MethodOutcome {
  std::string label;
  bool ok = true;
  std::string error;
  SolveTrace trace;
  std::string csv_path;
};

struct RunReport {
  std::vector<MethodOutcome> methods;
  nlohmann::json summary;
  /// 0 success, 3 when any method failed.
  int exit_code = 0;
};

/// Writes <out_dir>/<label>.csv per method and <out_dir>/summary.json.
/// `parallel` > 1 runs methods concurrently.
RunReport run_experiment(const ExperimentConfig& cfg, int parallel = 1);

struct SweepRow {
  int n = 0;
  std::string method;
  double rel_err_x = 0.0;  // nan for a failed cell
  double rel_err_F = 0.0;
  double wall_time_s = 0.0;
  std::string note;
};

/// One cell per (n, method); failures become nan rows with a note. Writes
/// <out_dir>/sweep.csv and <out_dir>/summary.json.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, int parallel = 1);

struct TimingRow {
  int m = 0;
  int n = 0;
  std::string method;
  int repeats = 0;
  double median_s = 0.0;
  double min_s = 0.0;
  double max_s = 0.0;
  std::string note;
};

/// Median wall time of one UL hypergradient per (m, n, method) after one
/// discarded warm-up step, always single-threaded. Writes
/// <out_dir>/timing.csv and <out_dir>/summary.json.
std::vector<TimingRow> time_steps(const ExperimentConfig& cfg);

struct ValidationRow {
  std::string field;
  GradientReport report;
};

/// Finite-difference check of every analytic gradient attached to a problem.
std::vector<ValidationRow> validate_problem(const BenchmarkProblem& bp, int probes,
                                            double tol, std::uint64_t seed);

/// Names accepted in a config's method list.
std::vector<std::string> method_names();

}  // namespace bvfsm
