#pragma once

#include "vibench/common.hpp"
#include "vibench/metrics.hpp"
#include "vibench/problems.hpp"
#include "vibench/solvers.hpp"
#include "vibench/trace.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace vibench::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Invalid experiment configuration; `field()` is a dotted path into the
/// config document (e.g. "stop.eps").
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Configuration

struct SolverEntry {
  std::string name;
  /// Used in file names; defaults to `name`.
  std::string label;
  /// "theorem" or "manual" for ommb; "default" or "manual" for baselines.
  std::string tuning;
  std::optional<double> eta;
  std::optional<double> gamma;
  std::optional<double> p;

  /// Batch size and seed do not enter the method.
  bool deterministic() const { return name != "ommb"; }
};

struct ProblemSpec {
  std::optional<GeneratorSpec> generator;
  std::optional<fs::path> matrix_file;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<SolverEntry> solvers;
  std::vector<Index> batch_sizes{1};
  std::vector<std::uint64_t> seeds{1};
  std::optional<double> eps;
  std::optional<double> max_ops;
  std::optional<std::int64_t> max_iters;
  std::int64_t cadence = 100;
  fs::path output_dir = "vibench-out";
  bool record_time = true;
  int jobs = 1;
  bool force = false;

  void validate() const {
    if (!problem.generator && !problem.matrix_file)
      throw ConfigError("problem", "either a generator or a matrix_file is required");
    if (problem.generator && problem.matrix_file)
      throw ConfigError("problem", "generator and matrix_file are mutually exclusive");
    if (problem.generator) {
      if (problem.generator->dim < 2) throw ConfigError("problem.generator.dim", "must be >= 2");
      if (!(problem.generator->theta > 0.0)) throw ConfigError("problem.generator.theta", "must be positive");
    }
    if (solvers.empty()) throw ConfigError("solvers", "at least one solver is required");
    for (std::size_t i = 0; i < solvers.size(); ++i) {
      const auto& s = solvers[i];
      const std::string path = "solvers[" + std::to_string(i) + "]";
      if (s.name.empty()) throw ConfigError(path + ".name", "must be non-empty");
      if (s.tuning == "manual") {
        if (!s.eta || !(*s.eta > 0.0)) throw ConfigError(path + ".eta", "manual tuning needs eta > 0");
        if (s.name == "ommb") {
          if (!s.gamma || *s.gamma < 0.0 || *s.gamma > 1.0)
            throw ConfigError(path + ".gamma", "manual tuning needs gamma in [0, 1]");
          if (!s.p || !(*s.p > 0.0) || *s.p > 1.0)
            throw ConfigError(path + ".p", "manual tuning needs p in (0, 1]");
        }
      } else if (s.name == "ommb" && s.tuning != "theorem") {
        throw ConfigError(path + ".tuning", "expected 'theorem' or 'manual'");
      } else if (s.name != "ommb" && s.tuning != "default") {
        throw ConfigError(path + ".tuning", "expected 'default' or 'manual'");
      }
      if (s.gamma && s.tuning == "theorem" && !(*s.gamma > 0.0 && *s.gamma <= kMaxTheoremGamma))
        throw ConfigError(path + ".gamma", "theorem tuning needs gamma in (0, 1/16]");
    }
    if (batch_sizes.empty()) throw ConfigError("batch_sizes", "at least one batch size is required");
    for (std::size_t i = 0; i < batch_sizes.size(); ++i)
      if (batch_sizes[i] < 1) throw ConfigError("batch_sizes[" + std::to_string(i) + "]", "must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
    if (eps && !(*eps > 0.0)) throw ConfigError("stop.eps", "must be positive");
    if (max_ops && !(*max_ops > 0.0 && std::isfinite(*max_ops)))
      throw ConfigError("stop.max_ops", "must be positive and finite");
    if (max_iters && *max_iters < 0) throw ConfigError("stop.max_iters", "must be nonnegative");
    if (!eps && !max_ops && !max_iters)
      throw ConfigError("stop", "a target eps or a finite budget (max_ops / max_iters) is required");
    if (cadence < 1) throw ConfigError("cadence", "must be >= 1");
    if (jobs < 1) throw ConfigError("jobs", "must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");
  }
};

inline SolverEntry default_solver_entry(const std::string& name) {
  SolverEntry e;
  e.name = name;
  e.label = name;
  e.tuning = name == "ommb" ? "theorem" : "default";
  return e;
}

namespace detail {

template <class T>
T get_field(const json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("invalid value (") + e.what() + ")");
  }
}

template <class T>
std::optional<T> get_optional(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get_field<T>(j, key, path);
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
  }
}

}  // namespace detail

/// Parses the JSON config document; see README for the schema.
inline ExperimentConfig parse_config(const json& doc) {
  using detail::get_field;
  using detail::get_optional;
  if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
  detail::reject_unknown(doc,
                         {"problem", "solvers", "batch_sizes", "seeds", "stop", "cadence", "output_dir",
                          "record_time", "jobs"},
                         "");
  ExperimentConfig cfg;
  cfg.solvers.clear();

  if (doc.contains("problem")) {
    const json& p = doc.at("problem");
    if (!p.is_object()) throw ConfigError("problem", "must be an object");
    detail::reject_unknown(p, {"generator", "matrix_file"}, "problem");
    if (p.contains("generator")) {
      const json& g = p.at("generator");
      if (!g.is_object()) throw ConfigError("problem.generator", "must be an object");
      detail::reject_unknown(g, {"kind", "dim", "seed", "theta"}, "problem.generator");
      GeneratorSpec spec;
      try {
        spec.kind = parse_generator_kind(get_field<std::string>(g, "kind", "problem.generator.kind"));
      } catch (const InvalidArgument& e) {
        throw ConfigError("problem.generator.kind", e.what());
      }
      spec.dim = get_field<Index>(g, "dim", "problem.generator.dim");
      spec.seed = get_optional<std::uint64_t>(g, "seed", "problem.generator.seed").value_or(0);
      spec.theta = get_optional<double>(g, "theta", "problem.generator.theta").value_or(0.8);
      cfg.problem.generator = spec;
    }
    if (p.contains("matrix_file"))
      cfg.problem.matrix_file = get_field<std::string>(p, "matrix_file", "problem.matrix_file");
  }

  if (doc.contains("solvers")) {
    const json& list = doc.at("solvers");
    if (!list.is_array()) throw ConfigError("solvers", "must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "solvers[" + std::to_string(i) + "]";
      const json& s = list[i];
      SolverEntry e;
      if (s.is_string()) {
        e = default_solver_entry(s.get<std::string>());
      } else if (s.is_object()) {
        detail::reject_unknown(s, {"name", "label", "tuning", "eta", "gamma", "p"}, path);
        e = default_solver_entry(get_field<std::string>(s, "name", path + ".name"));
        e.label = get_optional<std::string>(s, "label", path + ".label").value_or(e.name);
        e.tuning = get_optional<std::string>(s, "tuning", path + ".tuning").value_or(e.tuning);
        e.eta = get_optional<double>(s, "eta", path + ".eta");
        e.gamma = get_optional<double>(s, "gamma", path + ".gamma");
        e.p = get_optional<double>(s, "p", path + ".p");
      } else {
        throw ConfigError(path, "must be a solver name or an object");
      }
      cfg.solvers.push_back(e);
    }
  }

  if (doc.contains("batch_sizes")) cfg.batch_sizes = get_field<std::vector<Index>>(doc, "batch_sizes", "batch_sizes");
  if (doc.contains("seeds")) cfg.seeds = get_field<std::vector<std::uint64_t>>(doc, "seeds", "seeds");
  if (doc.contains("stop")) {
    const json& st = doc.at("stop");
    if (!st.is_object()) throw ConfigError("stop", "must be an object");
    detail::reject_unknown(st, {"eps", "max_ops", "max_iters"}, "stop");
    cfg.eps = get_optional<double>(st, "eps", "stop.eps");
    cfg.max_ops = get_optional<double>(st, "max_ops", "stop.max_ops");
    cfg.max_iters = get_optional<std::int64_t>(st, "max_iters", "stop.max_iters");
  }
  if (doc.contains("cadence")) cfg.cadence = get_field<std::int64_t>(doc, "cadence", "cadence");
  if (doc.contains("output_dir")) cfg.output_dir = get_field<std::string>(doc, "output_dir", "output_dir");
  if (doc.contains("record_time")) cfg.record_time = get_field<bool>(doc, "record_time", "record_time");
  if (doc.contains("jobs")) cfg.jobs = get_field<int>(doc, "jobs", "jobs");
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = parse_config(doc);
  // Relative matrix paths resolve against the config file's directory.
  if (cfg.problem.matrix_file && cfg.problem.matrix_file->is_relative())
    cfg.problem.matrix_file = path.parent_path() / *cfg.problem.matrix_file;
  return cfg;
}

inline Matrix build_matrix(const ProblemSpec& spec) {
  if (spec.matrix_file) return load_matrix(*spec.matrix_file);
  if (spec.generator) return generate_matrix(*spec.generator);
  throw ConfigError("problem", "no problem source");
}

// ---------------------------------------------------------------------------
// Run planning and execution

struct RunPlan {
  std::size_t index = 0;
  SolverEntry solver;
  Index batch = 1;
  std::uint64_t seed = 0;
  /// seed XOR run index; the RNG stream of this run.
  std::uint64_t stream_seed = 0;
  std::string stem;
};

/// Cross product solvers x batch sizes x seeds, in that nesting order.
/// Deterministic solvers run once per seed with b = M.
inline std::vector<RunPlan> plan_runs(const ExperimentConfig& cfg, Index num_components) {
  std::vector<RunPlan> plans;
  std::map<std::string, int> seen;
  for (const auto& solver : cfg.solvers) {
    std::vector<Index> batches = cfg.batch_sizes;
    if (solver.deterministic()) batches = {num_components};
    for (Index b : batches) {
      if (b > num_components)
        throw ConfigError("batch_sizes", "batch size " + std::to_string(b) + " exceeds M = " +
                                             std::to_string(num_components));
      for (std::uint64_t seed : cfg.seeds) {
        RunPlan plan;
        plan.index = plans.size();
        plan.solver = solver;
        plan.batch = b;
        plan.seed = seed;
        plan.stream_seed = seed ^ static_cast<std::uint64_t>(plan.index);
        plan.stem = solver.label + "_b" + std::to_string(b) + "_s" + std::to_string(seed);
        if (seen[plan.stem]++ > 0)
          throw ConfigError("solvers", "two runs would both write '" + plan.stem + "' (use distinct labels)");
        plans.push_back(plan);
      }
    }
  }
  return plans;
}

struct RunResult {
  RunPlan plan;
  RunTrace trace;
  bool diverged = false;
  std::string error;
  std::vector<std::string> warnings;
};

inline SolverConfig solver_config(const RunPlan& plan) {
  SolverConfig c;
  c.tuning = plan.solver.tuning;
  c.params.batch = plan.batch;
  c.params.seed = plan.stream_seed;
  if (plan.solver.eta) c.params.eta = *plan.solver.eta;
  if (plan.solver.gamma) c.params.gamma = *plan.solver.gamma;
  if (plan.solver.p) c.params.p = *plan.solver.p;
  if (c.tuning == "theorem") c.gamma = plan.solver.gamma;
  return c;
}

inline StopCriteria stop_criteria(const ExperimentConfig& cfg) {
  StopCriteria stop;
  stop.max_iters = cfg.max_iters.value_or(std::numeric_limits<std::int64_t>::max());
  stop.max_ops = cfg.max_ops;
  stop.target_gap = cfg.eps;
  return stop;
}

/// Executes one planned run from the barycenter. Divergence is captured in
/// the result together with the rows recorded before it.
inline RunResult execute_run(const MatrixGame& game, const ExperimentConfig& cfg, const RunPlan& plan,
                             SolverRegistry<MatrixGame>& registry = SolverRegistry<MatrixGame>::global()) {
  RunResult result;
  result.plan = plan;
  SolverInstance<MatrixGame> inst = registry.create(plan.solver.name, game, solver_config(plan));
  result.warnings = inst.warnings;
  Rng rng(plan.stream_seed);
  RunOptions<MatrixGame> options;
  options.cadence = cfg.cadence;
  try {
    result.trace = run_solver(game, *inst.solver, game.center(), rng, stop_criteria(cfg), options);
  } catch (const RunDivergedError& e) {
    result.trace = e.partial();
    result.diverged = true;
    result.error = e.what();
  }
  result.trace.meta.solver = plan.solver.label;
  result.trace.meta.seed = plan.seed;
  result.trace.meta.batch = plan.batch;
  result.trace.meta.problem_digest = game.digest();
  result.trace.meta.theorem_mode = inst.theorem_mode;
  result.trace.meta.clamped = inst.clamped;
  result.trace.meta.warnings = inst.warnings;
  return result;
}

inline std::string hex_digest(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline json metadata_json(const RunResult& r) {
  const RunMetadata& m = r.trace.meta;
  json j;
  j["schema_version"] = kTraceSchemaVersion;
  j["solver"] = m.solver;
  j["method"] = r.plan.solver.name;
  j["tuning"] = r.plan.solver.tuning;
  j["batch"] = m.batch;
  j["seed"] = m.seed;
  j["stream_seed"] = r.plan.stream_seed;
  j["eta"] = m.eta;
  j["gamma"] = m.gamma;
  j["p"] = m.p;
  j["num_components"] = m.num_components;
  j["dim"] = m.dim;
  j["problem_digest"] = hex_digest(m.problem_digest);
  j["theorem_mode"] = m.theorem_mode;
  j["clamped"] = m.clamped;
  j["warnings"] = m.warnings;
  j["status"] = to_string(m.status);
  j["iterations"] = m.iterations;
  j["snapshot_refreshes"] = m.snapshot_refreshes;
  j["expected_ops_per_iter"] = m.expected_ops_per_iter;
  if (r.diverged) j["error"] = r.error;
  return j;
}

// ---------------------------------------------------------------------------
// Trace summaries

/// Matvec ops at which gap_avg first drops to eps, interpolated linearly in
/// log(gap) between that row and the previous one.
inline std::optional<double> ops_to_target(const std::vector<TraceRow>& rows, double eps) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!(rows[i].gap_avg <= eps)) continue;
    if (i == 0) return rows[i].matvec_ops;
    const TraceRow& a = rows[i - 1];
    const TraceRow& b = rows[i];
    if (!(a.gap_avg > 0.0) || !(b.gap_avg > 0.0)) return b.matvec_ops;
    const double la = std::log(a.gap_avg);
    const double lb = std::log(b.gap_avg);
    const double le = std::log(eps);
    if (la == lb) return b.matvec_ops;
    const double t = std::clamp((la - le) / (la - lb), 0.0, 1.0);
    return a.matvec_ops + t * (b.matvec_ops - a.matvec_ops);
  }
  return std::nullopt;
}

struct TraceSummary {
  std::string file;
  std::string solver;
  Index batch = 0;
  std::uint64_t seed = 0;
  std::optional<double> ops_to_target;
  double budget = 0.0;
  double final_gap = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> slope;
};

/// Solver, batch and seed from the sidecar metadata if present, else from
/// a `<solver>_b<k>_s<seed>.csv` file name.
inline void identify_trace(const fs::path& file, TraceSummary& s) {
  fs::path meta = file;
  meta.replace_extension(".meta.json");
  if (fs::exists(meta)) {
    std::ifstream in(meta);
    try {
      const json j = json::parse(in);
      s.solver = j.value("solver", file.stem().string());
      s.batch = j.value("batch", Index{0});
      s.seed = j.value("seed", std::uint64_t{0});
      return;
    } catch (const json::exception&) {
    }
  }
  const std::string stem = file.stem().string();
  const auto spos = stem.rfind("_s");
  const auto bpos = stem.rfind("_b", spos == std::string::npos ? std::string::npos : spos);
  s.solver = stem;
  if (spos == std::string::npos || bpos == std::string::npos || bpos >= spos) return;
  try {
    s.batch = static_cast<Index>(std::stoll(stem.substr(bpos + 2, spos - bpos - 2)));
    s.seed = std::stoull(stem.substr(spos + 2));
    s.solver = stem.substr(0, bpos);
  } catch (const std::exception&) {
    s.solver = stem;
    s.batch = 0;
    s.seed = 0;
  }
}

inline TraceSummary summarize_trace(const std::vector<TraceRow>& rows, double eps) {
  TraceSummary s;
  if (rows.empty()) return s;
  s.ops_to_target = ops_to_target(rows, eps);
  s.budget = rows.back().matvec_ops;
  s.final_gap = rows.back().gap_avg;
  const std::int64_t last = rows.back().iter;
  try {
    s.slope = slope_estimate(rows, std::max<std::int64_t>(1, last / 10), last);
  } catch (const InvalidArgument&) {
    s.slope.reset();
  }
  return s;
}

struct GroupSummary {
  std::string solver;
  Index batch = 0;
  std::size_t runs = 0;
  std::size_t reached = 0;
  std::optional<double> min_ops;
  std::optional<double> median_ops;
  std::optional<double> max_ops;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Groups per (solver, batch). Statistics cover runs that reached the target.
inline std::vector<GroupSummary> aggregate(const std::vector<TraceSummary>& runs) {
  std::map<std::pair<std::string, Index>, std::vector<const TraceSummary*>> groups;
  for (const auto& r : runs) groups[{r.solver, r.batch}].push_back(&r);
  std::vector<GroupSummary> out;
  for (const auto& [key, members] : groups) {
    GroupSummary g;
    g.solver = key.first;
    g.batch = key.second;
    g.runs = members.size();
    std::vector<double> ops;
    for (const auto* m : members)
      if (m->ops_to_target) ops.push_back(*m->ops_to_target);
    g.reached = ops.size();
    if (!ops.empty()) {
      g.min_ops = *std::min_element(ops.begin(), ops.end());
      g.max_ops = *std::max_element(ops.begin(), ops.end());
      g.median_ops = median_of(ops);
    }
    out.push_back(g);
  }
  return out;
}

inline std::string format_ops(const std::optional<double>& v, double budget) {
  if (!v) return "not reached (budget " + vibench::detail::format_sig(budget, 6) + ")";
  return vibench::detail::format_sig(*v, 6);
}

inline std::string format_summary_table(const std::vector<TraceSummary>& runs,
                                        const std::vector<GroupSummary>& groups, double eps) {
  std::ostringstream os;
  os << "target gap " << eps << "\n\n";
  os << std::left << std::setw(28) << "trace" << std::setw(12) << "solver" << std::setw(6) << "b" << std::setw(8)
     << "seed" << std::setw(32) << "ops_to_target" << std::setw(14) << "final_gap" << "slope\n";
  for (const auto& r : runs) {
    os << std::left << std::setw(28) << fs::path(r.file).filename().string() << std::setw(12) << r.solver
       << std::setw(6) << r.batch << std::setw(8) << r.seed << std::setw(32)
       << format_ops(r.ops_to_target, r.budget) << std::setw(14) << vibench::detail::format_sig(r.final_gap, 6)
       << (r.slope ? vibench::detail::format_sig(*r.slope, 4) : std::string("n/a")) << '\n';
  }
  os << '\n'
     << std::left << std::setw(12) << "solver" << std::setw(6) << "b" << std::setw(8) << "runs" << std::setw(9)
     << "reached" << std::setw(14) << "min_ops" << std::setw(14) << "median_ops" << "max_ops\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? vibench::detail::format_sig(*v, 6) : std::string("-");
  };
  for (const auto& g : groups) {
    os << std::left << std::setw(12) << g.solver << std::setw(6) << g.batch << std::setw(8) << g.runs
       << std::setw(9) << g.reached << std::setw(14) << cell(g.min_ops) << std::setw(14) << cell(g.median_ops)
       << cell(g.max_ops) << '\n';
  }
  return os.str();
}

inline json summary_json(const std::vector<TraceSummary>& runs, const std::vector<GroupSummary>& groups,
                         double eps) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["eps"] = eps;
  j["runs"] = json::array();
  for (const auto& r : runs) {
    json e;
    e["file"] = r.file;
    e["solver"] = r.solver;
    e["batch"] = r.batch;
    e["seed"] = r.seed;
    e["ops_to_target"] = opt(r.ops_to_target);
    e["reached"] = r.ops_to_target.has_value();
    e["budget"] = r.budget;
    e["final_gap"] = std::isfinite(r.final_gap) ? json(r.final_gap) : json(nullptr);
    e["slope"] = opt(r.slope);
    j["runs"].push_back(e);
  }
  j["groups"] = json::array();
  for (const auto& g : groups) {
    json e;
    e["solver"] = g.solver;
    e["batch"] = g.batch;
    e["runs"] = g.runs;
    e["reached"] = g.reached;
    e["min_ops"] = opt(g.min_ops);
    e["median_ops"] = opt(g.median_ops);
    e["max_ops"] = opt(g.max_ops);
    j["groups"].push_back(e);
  }
  return j;
}

/// Loads and summarizes trace files. Throws ParseError naming the file for
/// empty or malformed traces.
inline std::vector<TraceSummary> summarize_files(const std::vector<fs::path>& files, double eps) {
  if (files.empty()) throw InvalidArgument("summarize: at least one trace file is required");
  if (!(eps > 0.0)) throw InvalidArgument("summarize: eps must be positive");
  std::vector<TraceSummary> out;
  for (const auto& f : files) {
    const auto rows = load_trace_csv(f);
    if (rows.empty()) throw ParseError(f.string() + ": trace has no rows");
    TraceSummary s = summarize_trace(rows, eps);
    s.file = f.string();
    identify_trace(f, s);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plot data

inline constexpr double kPlotGapFloor = 1e-300;

/// Writes `<solver>_b<k>.dat` per (solver, batch) with whitespace-separated
/// (matvec_ops, gap_avg) pairs; seeds appear as blank-line separated blocks.
/// Nonpositive gaps are written as 1e-300. Returns the files written.
inline std::vector<fs::path> write_plot_data(const std::vector<fs::path>& files, const fs::path& out_dir) {
  std::map<std::pair<std::string, Index>, std::vector<std::pair<TraceSummary, std::vector<TraceRow>>>> groups;
  for (const auto& f : files) {
    TraceSummary id;
    identify_trace(f, id);
    groups[{id.solver, id.batch}].emplace_back(id, load_trace_csv(f));
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<fs::path> written;
  for (auto& [key, traces] : groups) {
    std::sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) { return a.first.seed < b.first.seed; });
    const fs::path path = out_dir / (key.first + "_b" + std::to_string(key.second) + ".dat");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    bool first = true;
    for (const auto& [id, rows] : traces) {
      if (!first) out << "\n\n";
      first = false;
      out << "# matvec_ops gap_avg (seed " << id.seed << ")\n";
      for (const auto& r : rows) {
        const double g = r.gap_avg > 0.0 ? r.gap_avg : kPlotGapFloor;
        out << vibench::detail::format_sig(r.matvec_ops, 10) << ' ' << vibench::detail::format_sig(g, 10) << '\n';
      }
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
    written.push_back(path);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentResult {
  std::vector<RunResult> runs;
  bool any_diverged = false;
  fs::path summary_path;
};

/// Refuses a non-empty output directory unless `force`.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError("'" + dir.string() + "' exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !force)
      throw IoError("output directory '" + dir.string() + "' already exists and is not empty (use --force)");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

/// Runs the full cross product on `cfg.jobs` worker threads. Every run owns
/// its RNG stream and output files, so results do not depend on the
/// number of workers.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       SolverRegistry<MatrixGame>& registry = SolverRegistry<MatrixGame>::global()) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.solvers.size(); ++i)
    if (!registry.contains(cfg.solvers[i].name)) {
      std::string known;
      for (const auto& n : registry.names()) known += (known.empty() ? "" : ", ") + n;
      throw ConfigError("solvers[" + std::to_string(i) + "].name",
                        "unknown solver '" + cfg.solvers[i].name + "'; registered solvers: " + known);
    }
  const MatrixGame game(build_matrix(cfg.problem));
  const auto plans = plan_runs(cfg, game.num_components());
  prepare_output_dir(cfg.output_dir, cfg.force);

  ExperimentResult result;
  result.runs.resize(plans.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(plans.size());
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plans.size()) return;
      try {
        result.runs[i] = execute_run(game, cfg, plans[i], registry);
        const fs::path csv = cfg.output_dir / (plans[i].stem + ".csv");
        save_trace_csv(csv, result.runs[i].trace.rows, cfg.record_time);
        std::ofstream meta(cfg.output_dir / (plans[i].stem + ".meta.json"));
        meta << metadata_json(result.runs[i]).dump(2) << '\n';
        if (!meta) throw IoError("cannot write metadata for '" + plans[i].stem + "'");
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(plans.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const InvalidArgument& e) {
      throw ConfigError("solvers", plans[i].stem + ": " + e.what());
    }
  }

  json summary;
  summary["problem"]["source"] = cfg.problem.matrix_file ? cfg.problem.matrix_file->string()
                                                         : to_string(cfg.problem.generator->kind);
  if (cfg.problem.generator) {
    summary["problem"]["dim"] = cfg.problem.generator->dim;
    summary["problem"]["seed"] = cfg.problem.generator->seed;
    summary["problem"]["theta"] = cfg.problem.generator->theta;
  }
  summary["problem"]["d"] = game.size();
  summary["problem"]["digest"] = hex_digest(game.digest());
  summary["problem"]["L"] = game.lipschitz().L;
  summary["problem"]["L_bar"] = game.lipschitz().L_bar;
  summary["runs"] = json::array();
  for (const auto& r : result.runs) {
    json e = metadata_json(r);
    e["trace"] = r.plan.stem + ".csv";
    if (!r.trace.rows.empty()) {
      e["final_gap"] = r.trace.rows.back().gap_avg;
      e["final_matvec_ops"] = r.trace.rows.back().matvec_ops;
      if (cfg.eps) {
        const auto ops = ops_to_target(r.trace.rows, *cfg.eps);
        e["ops_to_target"] = ops ? json(*ops) : json(nullptr);
      }
    }
    result.any_diverged = result.any_diverged || r.diverged;
    summary["runs"].push_back(e);
  }
  result.summary_path = cfg.output_dir / "summary.json";
  std::ofstream out(result.summary_path);
  out << summary.dump(2) << '\n';
  if (!out) throw IoError("cannot write '" + result.summary_path.string() + "'");
  return result;
}

}  // namespace vibench::bench
