// bvfsm: experiment runner. Exit codes: 0 success, 2 config error,
// 3 runtime failure (partial artifacts are kept).

#include "bvfsm/experiment.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Common {
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> cap;
  int parallel = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_parallel) {
  cmd->add_option("--config", c.config, "JSON experiment config")->required();
  cmd->add_option("--out-dir", c.out_dir, "Directory for CSV and summary output");
  cmd->add_option("--seed", c.seed, "Seed (overrides the config, then BVFSM_SEED)");
  cmd->add_option("--wall-clock-cap-s", c.cap, "Per-run wall-clock budget in seconds")
      ->check(CLI::NonNegativeNumber);
  if (with_parallel) {
    cmd->add_option("--parallel", c.parallel, "Run up to N independent cells at once")
        ->check(CLI::PositiveNumber);
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BVFSM_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw bvfsm::ConfigError(std::string("BVFSM_SEED is not an integer: ") + s);
  return v;
}

bvfsm::ExperimentConfig load(const Common& c) {
  std::ifstream is(c.config);
  if (!is) throw bvfsm::ConfigError("cannot read config " + c.config);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw bvfsm::ConfigError(c.config + ": " + e.what());
  }
  if (!doc.is_object()) throw bvfsm::ConfigError("config must be a JSON object");
  if (c.seed) doc["seed"] = *c.seed;
  else if (!doc.contains("seed")) {
    if (auto s = env_seed()) doc["seed"] = *s;
  }
  if (c.out_dir) doc["out_dir"] = *c.out_dir;
  if (c.cap) doc["wall_clock_cap_s"] = *c.cap;
  return bvfsm::ExperimentConfig::from_json(doc);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto report = bvfsm::run_experiment(cfg, c.parallel);
  for (const auto& m : report.methods) {
    std::cout << m.label << ": ";
    if (!m.trace.records.empty()) {
      const auto& r = m.trace.last();
      std::cout << "k=" << r.k << " F=" << num(r.F);
      if (r.rel_err_x) std::cout << " rel_err_x=" << num(*r.rel_err_x);
      if (r.rel_err_F) std::cout << " rel_err_F=" << num(*r.rel_err_F);
    }
    if (!m.ok) std::cout << " FAILED: " << m.error;
    std::cout << '\n';
  }
  std::cout << "wrote " << cfg.out_dir << "/summary.json\n";
  return report.exit_code;
}

int cmd_sweep(const Common& c) {
  const auto cfg = load(c);
  for (const auto& r : bvfsm::run_sweep(cfg, c.parallel)) {
    std::cout << "n=" << r.n << ' ' << r.method << " rel_err_x=" << num(r.rel_err_x)
              << " time=" << num(r.wall_time_s) << "s";
    if (!r.note.empty()) std::cout << " (" << r.note << ')';
    std::cout << '\n';
  }
  std::cout << "wrote " << cfg.out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_time(const Common& c) {
  const auto cfg = load(c);
  for (const auto& r : bvfsm::time_steps(cfg)) {
    std::cout << "m=" << r.m << " n=" << r.n << ' ' << r.method << " median=" << num(r.median_s)
              << "s over " << r.repeats;
    if (!r.note.empty()) std::cout << " (" << r.note << ')';
    std::cout << '\n';
  }
  std::cout << "wrote " << cfg.out_dir << "/timing.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Value-function-based bilevel optimization experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(bvfsm::version()));

  Common run_opts, sweep_opts, time_opts;
  auto* run = app.add_subcommand("run", "Run every method of a config on one problem");
  add_common(run, run_opts, true);
  auto* sweep = app.add_subcommand("sweep", "Final errors across LL dimensions");
  add_common(sweep, sweep_opts, true);
  auto* time = app.add_subcommand("time", "Median per-step hypergradient time");
  add_common(time, time_opts, false);

  std::string vproblem;
  int probes = 20;
  double tol = 1e-5;
  std::optional<std::uint64_t> vseed;
  auto* validate = app.add_subcommand("validate", "Finite-difference gradient checks");
  validate->add_option("--problem", vproblem, "Registry name, e.g. sin:n=2,a=2,c=2")
      ->required();
  validate->add_option("--probes", probes, "Random probe points")->check(CLI::PositiveNumber);
  validate->add_option("--tol", tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  validate->add_option("--seed", vseed, "Probe seed (falls back to BVFSM_SEED)");

  auto* list_problems = app.add_subcommand("list-problems", "Registered problem families");
  auto* list_methods = app.add_subcommand("list-methods", "Method names for configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts);
    if (*time) return cmd_time(time_opts);
    if (*validate) {
      std::uint64_t seed = 1;
      if (vseed) seed = *vseed;
      else if (auto s = env_seed()) seed = *s;
      const auto bp = bvfsm::resolve_problem(vproblem, seed);
      bool ok = true;
      for (const auto& row : bvfsm::validate_problem(bp, probes, tol, seed)) {
        std::cout << row.field << ": max rel err x=" << num(row.report.max_rel_err_x)
                  << " y=" << num(row.report.max_rel_err_y)
                  << (row.report.passed ? " ok" : " FAIL") << '\n';
        ok = ok && row.report.passed;
      }
      return ok ? 0 : kRuntimeError;
    }
    if (*list_problems) {
      for (const auto& f : bvfsm::problem_families()) std::cout << f << '\n';
      return 0;
    }
    if (*list_methods) {
      for (const auto& m : bvfsm::method_names()) std::cout << m << '\n';
      return 0;
    }
  } catch (const bvfsm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const bvfsm::InvalidParameter& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
