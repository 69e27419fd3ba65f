#include "bvfsm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <sys/resource.h>

#ifdef BVFSM_HAVE_OPENMP
#include <omp.h>
#endif

#ifndef BVFSM_VERSION
#define BVFSM_VERSION "0.0.0"
#endif

namespace bvfsm {

using nlohmann::json;

const char* version() { return BVFSM_VERSION; }

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::set<std::string> kTunables = {
    "K", "L", "T_z", "T_y", "alpha", "step_z", "step_y", "aux_f", "aux_H", "aux_h",
    "aux_B", "mu0", "theta0", "sigma0", "decay", "sigma2", "sigma2_rule", "warm_start",
    "monotone_inner", "max_halvings", "alpha_per_dim", "T", "I", "Q", "aggregation",
    "ll_step", "hvp_eps", "neumann_scale"};

const std::set<std::string> kTopLevel = {"problem", "methods", "x0", "y0", "seed",
                                         "out_dir", "wall_clock_cap_s", "sweep",
                                         "timing"};

double number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("'" + key + "' must be a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& key) {
  const double v = number(j, key);
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw ConfigError("'" + key + "' must be an integer");
  }
  return static_cast<int>(v);
}

bool boolean(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError("'" + key + "' must be true or false");
  return j.get<bool>();
}

std::string string(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("'" + key + "' must be a string");
  return j.get<std::string>();
}

AuxiliaryFunction aux(const json& j, const std::string& key) {
  try {
    return AuxiliaryFunction::parse(string(j, key));
  } catch (const InvalidParameter& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

std::vector<double> start_spec(const json& j, const std::string& key) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError("'" + key + "' must be a number or an array");
  std::vector<double> v;
  for (const auto& e : j) v.push_back(number(e, key));
  return v;
}

// Schedule parameters live as separate keys; they are collected first and
// turned into a ScheduleState once every layer has been applied.
struct ScheduleKeys {
  double mu0 = 1.0, theta0 = 1.0, sigma0 = 1.0, decay = 1.0 / 1.01, sigma2 = 0.1;
  Sigma2Rule rule = Sigma2Rule::Static;
};

struct Layer {
  MethodSpec spec;
  ScheduleKeys sched;
  bool I_set = false;
};

void apply_key(Layer& L, const std::string& key, const json& v) {
  SolverConfig& s = L.spec.solver;
  BaselineConfig& b = L.spec.baseline;
  if (key == "K") L.spec.K = integer(v, key);
  else if (key == "L") s.L = integer(v, key);
  else if (key == "T_z") s.T_z = integer(v, key);
  else if (key == "T_y") s.T_y = integer(v, key);
  else if (key == "alpha") s.alpha = b.alpha = number(v, key);
  else if (key == "step_z") s.step_z = number(v, key);
  else if (key == "step_y") s.step_y = number(v, key);
  else if (key == "aux_f") s.aux_f = aux(v, key);
  else if (key == "aux_H") s.aux_H = aux(v, key);
  else if (key == "aux_h") s.aux_h = aux(v, key);
  else if (key == "aux_B") s.aux_B = aux(v, key);
  else if (key == "mu0") L.sched.mu0 = number(v, key);
  else if (key == "theta0") L.sched.theta0 = number(v, key);
  else if (key == "sigma0") L.sched.sigma0 = number(v, key);
  else if (key == "decay") L.sched.decay = number(v, key);
  else if (key == "sigma2") L.sched.sigma2 = number(v, key);
  else if (key == "sigma2_rule") {
    const std::string r = string(v, key);
    if (r == "static") L.sched.rule = Sigma2Rule::Static;
    else if (r == "dynamic") L.sched.rule = Sigma2Rule::DynamicOffset;
    else throw ConfigError("'sigma2_rule' must be \"static\" or \"dynamic\"");
  } else if (key == "warm_start") s.warm_start = boolean(v, key);
  else if (key == "monotone_inner") s.monotone_inner = boolean(v, key);
  else if (key == "max_halvings") s.max_halvings = integer(v, key);
  else if (key == "alpha_per_dim") L.spec.alpha_per_dim = boolean(v, key);
  else if (key == "T") b.T = integer(v, key);
  else if (key == "I") { b.I = integer(v, key); L.I_set = true; }
  else if (key == "Q") b.Q = integer(v, key);
  else if (key == "aggregation") b.aggregation = number(v, key);
  else if (key == "ll_step") b.ll_step = number(v, key);
  else if (key == "hvp_eps") b.hvp_eps = number(v, key);
  else if (key == "neumann_scale") b.neumann_scale = number(v, key);
  else throw ConfigError("unknown key '" + key + "'");
}

MethodSpec parse_method(const json& entry, const json& defaults) {
  json obj = entry.is_string() ? json{{"method", entry}} : entry;
  if (!obj.is_object()) throw ConfigError("a method must be a name or an object");
  if (!obj.contains("method")) throw ConfigError("method object without 'method'");
  const std::string name = string(obj["method"], "method");

  Layer L;
  for (const auto& [k, v] : defaults.items()) apply_key(L, k, v);
  if (name == "bvfsm") {
    L.spec.is_bvfsm = true;
  } else {
    BaselineConfig named;
    try {
      named = BaselineConfig::parse(name);
    } catch (const InvalidParameter& e) {
      throw ConfigError(e.what());
    }
    L.spec.is_bvfsm = false;
    L.spec.baseline.method = named.method;
    if (name.find(':') != std::string::npos) {
      switch (named.method) {
        case BaselineKind::TRHG: L.spec.baseline.I = named.I; L.I_set = true; break;
        case BaselineKind::BDA: L.spec.baseline.aggregation = named.aggregation; break;
        case BaselineKind::CG:
        case BaselineKind::Neumann: L.spec.baseline.Q = named.Q; break;
        case BaselineKind::RHG: break;
      }
    }
  }
  for (const auto& [k, v] : obj.items()) {
    if (k == "method" || k == "label") continue;
    apply_key(L, k, v);
  }
  if (!L.I_set) L.spec.baseline.I = L.spec.baseline.T;

  MethodSpec spec = L.spec;
  const ScheduleKeys& sk = L.sched;
  try {
    spec.solver.schedule = ScheduleState::geometric(sk.mu0, sk.theta0, sk.sigma0, sk.decay);
    spec.solver.schedule.sigma2.value = sk.sigma2;
    spec.solver.schedule.sigma2_rule = sk.rule;
    spec.solver.K = spec.K;
    if (spec.K < 0) throw InvalidParameter("K must be >= 0");
    if (spec.is_bvfsm) spec.solver.check();
    else spec.baseline.check();
  } catch (const InvalidParameter& e) {
    throw ConfigError(name + ": " + e.what());
  }
  if (obj.contains("label")) spec.label = string(obj["label"], "label");
  return spec;
}

json method_json(const MethodSpec& m) {
  json j;
  j["method"] = m.method_name();
  j["label"] = m.label;
  j["K"] = m.K;
  j["alpha_per_dim"] = m.alpha_per_dim;
  if (m.is_bvfsm) {
    const SolverConfig& s = m.solver;
    j["L"] = s.L;
    j["T_z"] = s.T_z;
    j["T_y"] = s.T_y;
    j["alpha"] = s.alpha;
    j["step_z"] = s.step_z;
    j["step_y"] = s.step_y;
    j["aux_f"] = s.aux_f.name();
    j["aux_H"] = s.aux_H.name();
    j["aux_h"] = s.aux_h.name();
    j["aux_B"] = s.aux_B.name();
    j["mu0"] = s.schedule.mu.value;
    j["theta0"] = s.schedule.theta.value;
    j["sigma0"] = s.schedule.sigma1.value;
    j["decay"] = s.schedule.mu.decay;
    j["sigma2"] = s.schedule.sigma2.value;
    j["sigma2_rule"] = s.schedule.sigma2_rule == Sigma2Rule::Static ? "static" : "dynamic";
    j["warm_start"] = s.warm_start;
    j["monotone_inner"] = s.monotone_inner;
    j["max_halvings"] = s.max_halvings;
  } else {
    const BaselineConfig& b = m.baseline;
    j["T"] = b.T;
    j["I"] = b.I;
    j["Q"] = b.Q;
    j["aggregation"] = b.aggregation;
    j["ll_step"] = b.ll_step;
    j["alpha"] = b.alpha;
    j["hvp_eps"] = b.hvp_eps;
    j["neumann_scale"] = b.neumann_scale;
  }
  return j;
}

bool valid_label(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  return os;
}

void write_json(const std::string& path, const json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw Error("write failed: " + path);
}

std::string out_path(const std::string& dir, const std::string& file) {
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / file).string();
}

json base_summary(const ExperimentConfig& cfg, const std::string& kind) {
  json s;
  s["kind"] = kind;
  s["version"] = version();
  s["seed"] = cfg.seed;
  s["config"] = cfg.to_json();
  struct rusage ru {};
  if (getrusage(RUSAGE_SELF, &ru) == 0 && ru.ru_maxrss > 0) s["peak_rss_kb"] = ru.ru_maxrss;
  return s;
}

std::string cell_problem(const std::string& family, int n, const std::string& params) {
  std::string name = family + ":n=" + std::to_string(n);
  if (!params.empty()) name += "," + params;
  return name;
}

template <class Fn>
void for_cells(int count, int parallel, Fn&& fn) {
#ifdef BVFSM_HAVE_OPENMP
  if (parallel > 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(parallel)
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
#endif
  (void)parallel;
  for (int i = 0; i < count; ++i) fn(i);
}

// Timing is always single-threaded.
class SerialScope {
 public:
  SerialScope() {
#ifdef BVFSM_HAVE_OPENMP
    saved_ = omp_get_max_threads();
    omp_set_num_threads(1);
#endif
  }
  ~SerialScope() {
#ifdef BVFSM_HAVE_OPENMP
    omp_set_num_threads(saved_);
#endif
  }
  SerialScope(const SerialScope&) = delete;
  SerialScope& operator=(const SerialScope&) = delete;

 private:
  int saved_ = 1;
};

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

std::string MethodSpec::method_name() const {
  return is_bvfsm ? std::string("bvfsm") : baseline.name();
}

MethodSpec MethodSpec::for_dimension(int n) const {
  MethodSpec m = *this;
  if (alpha_per_dim) {
    m.solver.alpha /= n + 1;
    m.baseline.alpha /= n + 1;
    m.alpha_per_dim = false;
  }
  return m;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  json defaults = json::object();
  for (const auto& [k, v] : doc.items()) {
    if (kTunables.count(k)) defaults[k] = v;
    else if (!kTopLevel.count(k)) throw ConfigError("unknown key '" + k + "'");
  }
  if (doc.contains("problem")) c.problem = string(doc["problem"], "problem");
  if (doc.contains("x0")) c.x0 = start_spec(doc["x0"], "x0");
  if (doc.contains("y0")) c.y0 = start_spec(doc["y0"], "y0");
  if (doc.contains("seed")) {
    const json& s = doc["seed"];
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<long long>() < 0)) {
      throw ConfigError("'seed' must be a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  if (doc.contains("out_dir")) c.out_dir = string(doc["out_dir"], "out_dir");
  if (doc.contains("wall_clock_cap_s")) {
    c.wall_clock_cap_s = number(doc["wall_clock_cap_s"], "wall_clock_cap_s");
    if (c.wall_clock_cap_s < 0) throw ConfigError("'wall_clock_cap_s' must be >= 0");
  }

  if (!doc.contains("methods") || !doc["methods"].is_array() || doc["methods"].empty()) {
    throw ConfigError("'methods' must be a non-empty array");
  }
  std::map<std::string, int> seen;
  for (const auto& entry : doc["methods"]) {
    MethodSpec m = parse_method(entry, defaults);
    if (m.label.empty()) {
      std::string base = m.method_name();
      std::replace(base.begin(), base.end(), ':', '-');
      const int count = ++seen[base];
      m.label = count == 1 ? base : base + "-" + std::to_string(count);
    }
    if (!valid_label(m.label)) throw ConfigError("bad label '" + m.label + "'");
    c.methods.push_back(std::move(m));
  }
  std::set<std::string> labels;
  for (const auto& m : c.methods) {
    if (!labels.insert(m.label).second) throw ConfigError("duplicate label '" + m.label + "'");
  }

  if (doc.contains("sweep")) {
    const json& s = doc["sweep"];
    if (!s.is_object()) throw ConfigError("'sweep' must be an object");
    for (const auto& [k, v] : s.items()) {
      if (k == "family") c.sweep.family = string(v, "sweep.family");
      else if (k == "params") c.sweep.params = string(v, "sweep.params");
      else if (k == "n_list") {
        if (!v.is_array()) throw ConfigError("'sweep.n_list' must be an array");
        for (const auto& n : v) c.sweep.n_list.push_back(integer(n, "sweep.n_list"));
      } else {
        throw ConfigError("unknown key 'sweep." + k + "'");
      }
    }
    for (int n : c.sweep.n_list) {
      if (n < 1) throw ConfigError("sweep dimensions must be >= 1");
    }
  }
  if (doc.contains("timing")) {
    const json& t = doc["timing"];
    if (!t.is_object()) throw ConfigError("'timing' must be an object");
    for (const auto& [k, v] : t.items()) {
      if (k == "family") c.timing.family = string(v, "timing.family");
      else if (k == "params") c.timing.params = string(v, "timing.params");
      else if (k == "repeats") c.timing.repeats = integer(v, "timing.repeats");
      else if (k == "sizes") {
        if (!v.is_array()) throw ConfigError("'timing.sizes' must be an array of [m, n]");
        for (const auto& mn : v) {
          if (!mn.is_array() || mn.size() != 2) {
            throw ConfigError("'timing.sizes' entries must be [m, n]");
          }
          c.timing.sizes.emplace_back(integer(mn[0], "timing.sizes"),
                                      integer(mn[1], "timing.sizes"));
        }
      } else {
        throw ConfigError("unknown key 'timing." + k + "'");
      }
    }
    if (c.timing.repeats < 3) throw ConfigError("'timing.repeats' must be >= 3");
  }

  if (!c.problem.empty()) {
    try {
      const BenchmarkProblem bp = resolve_problem(c.problem, c.seed);
      resolve_start(c.x0, bp.problem.m, bp.x0_hint);
      resolve_start(c.y0, bp.problem.n, bp.y0_hint);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("problem '" + c.problem + "': " + e.what());
    }
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  if (!problem.empty()) j["problem"] = problem;
  j["methods"] = json::array();
  for (const auto& m : methods) j["methods"].push_back(method_json(m));
  if (!x0.empty()) j["x0"] = x0;
  if (!y0.empty()) j["y0"] = y0;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["wall_clock_cap_s"] = wall_clock_cap_s;
  if (!sweep.n_list.empty()) {
    j["sweep"] = {{"family", sweep.family}, {"params", sweep.params}, {"n_list", sweep.n_list}};
  }
  if (!timing.sizes.empty()) {
    json sizes = json::array();
    for (const auto& [m, n] : timing.sizes) sizes.push_back({m, n});
    j["timing"] = {{"family", timing.family},
                   {"params", timing.params},
                   {"sizes", sizes},
                   {"repeats", timing.repeats}};
  }
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return ExperimentConfig::from_json(doc);
}

BenchmarkProblem resolve_problem(const std::string& name, std::uint64_t seed) {
  std::string full = name;
  if (name.rfind("hyperclean", 0) == 0 && name.find("seed=") == std::string::npos) {
    full += name.find(':') == std::string::npos ? ":" : ",";
    full += "seed=" + std::to_string(seed);
  }
  try {
    return make_problem(full);
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
}

Vector resolve_start(const std::vector<double>& spec, int dim, const Vector& hint) {
  if (spec.empty()) return hint.size() == dim ? hint : Vector::Zero(dim);
  if (spec.size() == 1) return Vector::Constant(dim, spec[0]);
  if (static_cast<int>(spec.size()) != dim) {
    throw ConfigError("start point has " + std::to_string(spec.size()) +
                      " entries, expected 1 or " + std::to_string(dim));
  }
  return Eigen::Map<const Vector>(spec.data(), dim);
}

SolveTrace run_method(const BenchmarkProblem& bp, const MethodSpec& spec, const Vector& x0,
                      const Vector& y0, double wall_clock_cap_s) {
  if (spec.is_bvfsm) {
    SolverConfig cfg = spec.solver;
    cfg.K = spec.K;
    cfg.wall_clock_cap_s = wall_clock_cap_s;
    return solve(bp.problem, cfg, x0, y0, bp.reference);
  }
  return run_baseline(bp.problem, spec.baseline, spec.K, x0, y0, bp.reference,
                      wall_clock_cap_s);
}

void write_trace_csv(const std::string& path, const SolveTrace& trace) {
  auto os = open_out(path);
  os << "k,l,wall_time_s,F,f,ul_grad_norm,rel_err_x,rel_err_F\n";
  for (const auto& r : trace.records) {
    os << r.k << ',' << r.l << ',' << fmt(r.wall_time_s) << ',' << fmt(r.F) << ','
       << fmt(r.f) << ',' << fmt(r.ul_grad_norm) << ',' << fmt(r.rel_err_x.value_or(kNaN))
       << ',' << fmt(r.rel_err_F.value_or(kNaN)) << '\n';
  }
  if (!os) throw Error("write failed: " + path);
}

RunReport run_experiment(const ExperimentConfig& cfg, int parallel) {
  if (cfg.problem.empty()) throw ConfigError("'problem' is required for a run");
  if (cfg.methods.empty()) throw ConfigError("'methods' must be a non-empty array");
  const BenchmarkProblem bp = resolve_problem(cfg.problem, cfg.seed);
  const Vector x0 = resolve_start(cfg.x0, bp.problem.m, bp.x0_hint);
  const Vector y0 = resolve_start(cfg.y0, bp.problem.n, bp.y0_hint);

  RunReport report;
  report.methods.resize(cfg.methods.size());
  for_cells(static_cast<int>(cfg.methods.size()), parallel, [&](int i) {
    const MethodSpec spec = cfg.methods[i].for_dimension(bp.problem.n);
    MethodOutcome& out = report.methods[i];
    out.label = spec.label;
    try {
      out.trace = run_method(bp, spec, x0, y0, cfg.wall_clock_cap_s);
    } catch (const SolveFailure& e) {
      out.ok = false;
      out.error = e.what();
      out.trace = e.trace();
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  });

  json summary = base_summary(cfg, "run");
  summary["problem"] = cfg.problem;
  if (bp.reference) {
    summary["reference"] = {{"x_star", std::vector<double>(bp.reference->x_star.begin(),
                                                           bp.reference->x_star.end())},
                            {"F_star", bp.reference->F_star}};
  }
  summary["methods"] = json::array();
  for (std::size_t i = 0; i < report.methods.size(); ++i) {
    MethodOutcome& out = report.methods[i];
    out.csv_path = out_path(cfg.out_dir, out.label + ".csv");
    write_trace_csv(out.csv_path, out.trace);
    json m;
    m["label"] = out.label;
    m["method"] = cfg.methods[i].method_name();
    m["status"] = out.ok ? "ok" : "failed";
    if (!out.ok) m["error"] = out.error;
    m["csv"] = out.csv_path;
    m["records"] = out.trace.records.size();
    if (!out.trace.records.empty()) {
      const TraceRecord& r = out.trace.last();
      m["final"] = {{"k", r.k},
                    {"l", r.l},
                    {"F", r.F},
                    {"f", r.f},
                    {"x", std::vector<double>(r.x.begin(), r.x.end())},
                    {"rel_err_x", r.rel_err_x ? json(*r.rel_err_x) : json()},
                    {"rel_err_F", r.rel_err_F ? json(*r.rel_err_F) : json()}};
      m["wall_time_s"] = r.wall_time_s;
    }
    m["inner_resets"] = out.trace.inner_resets;
    m["ul_halvings"] = out.trace.ul_halvings;
    summary["methods"].push_back(std::move(m));
    if (!out.ok) report.exit_code = 3;
  }
  summary["status"] = report.exit_code == 0 ? "ok" : "failed";
  report.summary = summary;
  write_json(out_path(cfg.out_dir, "summary.json"), summary);
  return report;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, int parallel) {
  if (cfg.sweep.n_list.empty()) throw ConfigError("'sweep.n_list' must be non-empty");
  const int nm = static_cast<int>(cfg.methods.size());
  const int cells = static_cast<int>(cfg.sweep.n_list.size()) * nm;
  std::vector<SweepRow> rows(cells);
  using clock = std::chrono::steady_clock;
  for_cells(cells, parallel, [&](int i) {
    SweepRow& row = rows[i];
    row.n = cfg.sweep.n_list[i / nm];
    const MethodSpec spec = cfg.methods[i % nm].for_dimension(row.n);
    row.method = spec.label;
    row.rel_err_x = row.rel_err_F = kNaN;
    const auto t0 = clock::now();
    try {
      const BenchmarkProblem bp =
          resolve_problem(cell_problem(cfg.sweep.family, row.n, cfg.sweep.params), cfg.seed);
      const Vector x0 = resolve_start(cfg.x0, bp.problem.m, bp.x0_hint);
      const Vector y0 = resolve_start(cfg.y0, bp.problem.n, bp.y0_hint);
      const SolveTrace tr = run_method(bp, spec, x0, y0, cfg.wall_clock_cap_s);
      row.rel_err_x = tr.last().rel_err_x.value_or(kNaN);
      row.rel_err_F = tr.last().rel_err_F.value_or(kNaN);
      if (!bp.reference) row.note = "no reference";
    } catch (const std::exception& e) {
      row.note = e.what();
    }
    row.wall_time_s = std::chrono::duration<double>(clock::now() - t0).count();
  });

  auto os = open_out(out_path(cfg.out_dir, "sweep.csv"));
  os << "n,method,rel_err_x,rel_err_F,wall_time_s,note\n";
  json summary = base_summary(cfg, "sweep");
  summary["rows"] = json::array();
  for (const auto& r : rows) {
    os << r.n << ',' << csv_field(r.method) << ',' << fmt(r.rel_err_x) << ','
       << fmt(r.rel_err_F) << ',' << fmt(r.wall_time_s) << ',' << csv_field(r.note) << '\n';
    summary["rows"].push_back({{"n", r.n},
                               {"method", r.method},
                               {"rel_err_x", r.rel_err_x},
                               {"rel_err_F", r.rel_err_F},
                               {"wall_time_s", r.wall_time_s},
                               {"note", r.note}});
  }
  if (!os) throw Error("write failed: sweep.csv");
  write_json(out_path(cfg.out_dir, "summary.json"), summary);
  return rows;
}

std::vector<TimingRow> time_steps(const ExperimentConfig& cfg) {
  if (cfg.timing.sizes.empty()) throw ConfigError("'timing.sizes' must be non-empty");
  SerialScope serial;
  using clock = std::chrono::steady_clock;
  std::vector<TimingRow> rows;
  for (const auto& [m, n] : cfg.timing.sizes) {
    for (const auto& method : cfg.methods) {
      TimingRow row;
      row.m = m;
      row.n = n;
      row.method = method.label;
      row.median_s = row.min_s = row.max_s = kNaN;
      std::vector<double> times;
      try {
        const BenchmarkProblem bp =
            resolve_problem(cell_problem(cfg.timing.family, n, cfg.timing.params), cfg.seed);
        const BilevelProblem& p = bp.problem;
        if (p.m != m) {
          throw ConfigError("family '" + cfg.timing.family + "' has m = " + std::to_string(p.m));
        }
        const MethodSpec spec = method.for_dimension(n);
        Vector x = resolve_start(cfg.x0, p.m, bp.x0_hint);
        Vector y = resolve_start(cfg.y0, p.n, bp.y0_hint);
        Vector z = y;
        ScheduleState sched = spec.solver.schedule;
        double spent = 0.0;
        for (int r = 0; r <= cfg.timing.repeats; ++r) {
          const auto t0 = clock::now();
          if (spec.is_bvfsm) {
            StepResult s = bvfsm_step(p, x, z, y, sched, spec.solver);
            x = std::move(s.x);
            z = std::move(s.inner.z);
            y = std::move(s.inner.y);
            sched = schedule_step(sched);
          } else {
            Hypergradient h = baseline_hypergradient(p, x, y, spec.baseline);
            x = p.ul_set.project(x - spec.baseline.alpha * h.grad);
            require_finite(x, "UL iterate");
            y = std::move(h.y_T);
          }
          const double dt = std::chrono::duration<double>(clock::now() - t0).count();
          spent += dt;
          if (r > 0) times.push_back(dt);
          if (cfg.wall_clock_cap_s > 0.0 && spent > cfg.wall_clock_cap_s &&
              r < cfg.timing.repeats) {
            row.note = "timeout after " + std::to_string(times.size()) + " timed steps";
            break;
          }
        }
      } catch (const std::exception& e) {
        row.note = e.what();
      }
      row.repeats = static_cast<int>(times.size());
      if (!times.empty()) {
        row.median_s = median(times);
        row.min_s = *std::min_element(times.begin(), times.end());
        row.max_s = *std::max_element(times.begin(), times.end());
      }
      rows.push_back(std::move(row));
    }
  }

  auto os = open_out(out_path(cfg.out_dir, "timing.csv"));
  os << "m,n,method,repeats,median_s,min_s,max_s,note\n";
  json summary = base_summary(cfg, "time");
  summary["rows"] = json::array();
  for (const auto& r : rows) {
    os << r.m << ',' << r.n << ',' << csv_field(r.method) << ',' << r.repeats << ','
       << fmt(r.median_s) << ',' << fmt(r.min_s) << ',' << fmt(r.max_s) << ','
       << csv_field(r.note) << '\n';
    summary["rows"].push_back({{"m", r.m},
                               {"n", r.n},
                               {"method", r.method},
                               {"repeats", r.repeats},
                               {"median_s", r.median_s},
                               {"note", r.note}});
  }
  if (!os) throw Error("write failed: timing.csv");
  write_json(out_path(cfg.out_dir, "summary.json"), summary);
  return rows;
}

std::vector<ValidationRow> validate_problem(const BenchmarkProblem& bp, int probes, double tol,
                                            std::uint64_t seed) {
  const BilevelProblem& p = bp.problem;
  std::vector<ValidationRow> rows;
  auto check = [&](const std::string& name, const ScalarField& field) {
    rows.push_back({name, validate_gradients(field, p.m, p.n, probes, tol, seed)});
  };
  check("F", p.F);
  check("f", p.f);
  for (std::size_t j = 0; j < p.ul_constraints.size(); ++j) {
    check("H" + std::to_string(j), p.ul_constraints[j]);
  }
  for (std::size_t j = 0; j < p.ll_constraints.size(); ++j) {
    check("h" + std::to_string(j), p.ll_constraints[j]);
  }
  return rows;
}

std::vector<std::string> method_names() {
  return {"bvfsm", "rhg", "trhg:I", "bda:aggregation", "cg:Q", "neumann:Q"};
}

}  // namespace bvfsm
