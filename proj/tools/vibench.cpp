// vibench: command-line harness for the finite-sum VI solvers.

#include "vibench/bench.hpp"
#include "vibench/metrics.hpp"
#include "vibench/problems.hpp"
#include "vibench/vi_core.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace vibench;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3 };

void setup_logging() {
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("VIBENCH_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honor a real "off".
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
    else spdlog::warn("VIBENCH_LOG='{}' is not a log level; using info", env);
  }
}

struct ProblemFlags {
  std::string kind = "policeman-burglar";
  Index dim = 50;
  std::uint64_t seed = 0;
  double theta = 0.8;
  std::string matrix;
};

void add_problem_flags(CLI::App* cmd, ProblemFlags& f, const std::string& seed_flag) {
  cmd->add_option("--kind", f.kind, "matrix generator: policeman-burglar, uniform-grid, seeded-gaussian")
      ->capture_default_str();
  cmd->add_option("--dim", f.dim, "matrix dimension d")->capture_default_str();
  cmd->add_option(seed_flag, f.seed, "generator seed")->capture_default_str();
  cmd->add_option("--theta", f.theta, "policeman-burglar decay")->capture_default_str();
  cmd->add_option("--matrix", f.matrix, "load the matrix from a file instead of generating it");
}

GeneratorSpec generator_spec(const ProblemFlags& f) {
  GeneratorSpec spec;
  spec.kind = parse_generator_kind(f.kind);
  spec.dim = f.dim;
  spec.seed = f.seed;
  spec.theta = f.theta;
  return spec;
}

Matrix problem_matrix(const ProblemFlags& f) {
  if (!f.matrix.empty()) return load_matrix(f.matrix);
  return generate_matrix(generator_spec(f));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& flag) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw bench::ConfigError(flag, "invalid list entry '" + item + "'");
    }
  }
  if (out.empty()) throw bench::ConfigError(flag, "empty list");
  return out;
}

// ---------------------------------------------------------------------------

struct RunFlags {
  std::string config;
  std::string solvers;
  std::string batches;
  std::string seeds;
  std::optional<double> eps;
  std::optional<double> max_ops;
  std::optional<std::int64_t> max_iters;
  std::optional<std::int64_t> cadence;
  std::string out;
  std::optional<int> jobs;
  bool force = false;
  bool no_time = false;
  ProblemFlags problem;
};

int cmd_run(const RunFlags& f, const CLI::App& cmd) {
  bench::ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = bench::load_config(f.config);
  } else {
    cfg.solvers = {bench::default_solver_entry("ommb")};
  }
  // Flags win over the config file.
  const bool problem_flag = cmd.count("--kind") || cmd.count("--dim") || cmd.count("--problem-seed") ||
                            cmd.count("--theta") || cmd.count("--matrix");
  if (problem_flag || (!cfg.problem.generator && !cfg.problem.matrix_file)) {
    if (!f.problem.matrix.empty()) {
      cfg.problem.generator.reset();
      cfg.problem.matrix_file = f.problem.matrix;
    } else {
      GeneratorSpec spec = cfg.problem.generator.value_or(GeneratorSpec{});
      if (!cfg.problem.generator || cmd.count("--kind")) spec.kind = parse_generator_kind(f.problem.kind);
      if (!cfg.problem.generator || cmd.count("--dim")) spec.dim = f.problem.dim;
      if (!cfg.problem.generator || cmd.count("--problem-seed")) spec.seed = f.problem.seed;
      if (!cfg.problem.generator || cmd.count("--theta")) spec.theta = f.problem.theta;
      cfg.problem.matrix_file.reset();
      cfg.problem.generator = spec;
    }
  }
  if (!f.solvers.empty()) {
    cfg.solvers.clear();
    for (const auto& name : split_list(f.solvers)) cfg.solvers.push_back(bench::default_solver_entry(name));
  }
  if (!f.batches.empty()) cfg.batch_sizes = parse_list<Index>(f.batches, "--batch");
  if (!f.seeds.empty()) cfg.seeds = parse_list<std::uint64_t>(f.seeds, "--seed");
  if (f.eps) cfg.eps = f.eps;
  if (f.max_ops) cfg.max_ops = f.max_ops;
  if (f.max_iters) cfg.max_iters = f.max_iters;
  if (f.cadence) cfg.cadence = *f.cadence;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.no_time) cfg.record_time = false;
  cfg.force = f.force;

  spdlog::info("running {} solver(s) x {} batch size(s) x {} seed(s) into {}", cfg.solvers.size(),
               cfg.batch_sizes.size(), cfg.seeds.size(), cfg.output_dir.string());
  const auto result = bench::run_experiment(cfg);
  for (const auto& r : result.runs) {
    const auto& rows = r.trace.rows;
    const double gap = rows.empty() ? std::nan("") : rows.back().gap_avg;
    const double ops = rows.empty() ? 0.0 : rows.back().matvec_ops;
    for (const auto& w : r.warnings) spdlog::warn("{}: {}", r.plan.stem, w);
    if (r.diverged)
      spdlog::error("{}: {}", r.plan.stem, r.error);
    else
      spdlog::info("{}: {} after {} iterations, gap_avg {:.4g} at {:.6g} ops", r.plan.stem,
                   to_string(r.trace.meta.status), r.trace.meta.iterations, gap, ops);
  }
  spdlog::info("summary written to {}", result.summary_path.string());
  return result.any_diverged ? kFailure : kOk;
}

int cmd_gen(const ProblemFlags& f, const std::string& out) {
  const Matrix A = generate_matrix(generator_spec(f));
  save_matrix(A, out);
  const MatrixGame game(A);
  std::cout << "d = " << game.size() << "\n"
            << "sigma_max (L) = " << game.lipschitz().L << "\n"
            << "L_bar = " << game.lipschitz().L_bar << "\n"
            << "wrote " << out << "\n";
  return kOk;
}

int cmd_verify(const ProblemFlags& f, int probes, std::uint64_t seed, bool halve_lbar) {
  const Matrix A = problem_matrix(f);
  MatrixGame game(A);
  if (halve_lbar) {
    LipschitzData lip = game.lipschitz();
    for (double& l : lip.per_component) l *= 0.5;
    lip.L_bar *= 0.5;
    game = MatrixGame(A, lip);
    spdlog::warn("declared per-component constants and L_bar halved (debug)");
  }
  VerificationReport report = verify_problem(game, probes, seed);

  // Closed-form gap against the attaining vertex pair.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  double worst_gap_mismatch = 0.0;
  double min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < probes; ++i) {
    Vec v(game.dim());
    for (Index k = 0; k < v.size(); ++k) v[k] = rng.normal();
    Vec z;
    game.prox(1.0, v, z);
    const double gap = game_duality_gap(game, z);
    const GapWitness w = gap_lower_witness(game, z);
    worst_gap_mismatch = std::max(worst_gap_mismatch, std::abs(gap - w.bound));
    min_gap = std::min(min_gap, gap);
  }
  const double scale = std::max(1.0, game.matrix().cwiseAbs().maxCoeff());
  if (worst_gap_mismatch > 1e-12 * scale) {
    report.passed = false;
    report.failures.push_back("duality gap differs from its witness bracket by " +
                              std::to_string(worst_gap_mismatch));
  }
  if (min_gap < -1e-10) {
    report.passed = false;
    report.failures.push_back("negative duality gap " + std::to_string(min_gap));
  }

  std::cout << "problem: d = " << game.size() << ", L = " << game.lipschitz().L
            << ", L_bar = " << game.lipschitz().L_bar << ", probes = " << probes << "\n";
  std::cout << report.to_string();
  std::cout << "  gap vs witness (max abs difference): " << worst_gap_mismatch << "\n";
  std::cout << "  min duality gap on probes: " << min_gap << "\n";
  return report.passed ? kOk : kFailure;
}

int cmd_summarize(const std::vector<std::string>& files, double eps, const std::string& json_out) {
  std::vector<fs::path> paths(files.begin(), files.end());
  const auto runs = bench::summarize_files(paths, eps);
  const auto groups = bench::aggregate(runs);
  std::cout << bench::format_summary_table(runs, groups, eps);
  const auto doc = bench::summary_json(runs, groups, eps);
  if (json_out == "-") {
    std::cout << '\n' << doc.dump(2) << '\n';
  } else if (!json_out.empty()) {
    std::ofstream out(json_out);
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("cannot write '" + json_out + "'");
  }
  return kOk;
}

int cmd_plotdata(const std::vector<std::string>& files, const std::string& out) {
  std::vector<fs::path> paths(files.begin(), files.end());
  for (const auto& p : bench::write_plot_data(paths, out)) std::cout << p.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Benchmark harness for stochastic finite-sum variational inequalities"};
  app.require_subcommand(1);

  RunFlags run;
  auto* run_cmd = app.add_subcommand("run", "run a solver x batch x seed experiment");
  run_cmd->add_option("--config", run.config, "JSON experiment config");
  run_cmd->add_option("--solver", run.solvers, "solver name(s), comma separated");
  run_cmd->add_option("--batch", run.batches, "batch size(s), comma separated");
  run_cmd->add_option("--seed", run.seeds, "run seed(s), comma separated");
  run_cmd->add_option("--eps", run.eps, "target duality gap");
  run_cmd->add_option("--max-ops", run.max_ops, "matvec-equivalent operation budget");
  run_cmd->add_option("--max-iters", run.max_iters, "iteration budget");
  run_cmd->add_option("--cadence", run.cadence, "trace row every N iterations");
  run_cmd->add_option("--out", run.out, "output directory");
  run_cmd->add_option("--jobs", run.jobs, "worker threads");
  run_cmd->add_flag("--force", run.force, "write into a non-empty output directory");
  run_cmd->add_flag("--no-time", run.no_time, "write elapsed_ms as 0");
  add_problem_flags(run_cmd, run.problem, "--problem-seed");

  ProblemFlags gen;
  std::string gen_out = "matrix.txt";
  auto* gen_cmd = app.add_subcommand("gen", "generate a matrix and save it");
  add_problem_flags(gen_cmd, gen, "--seed");
  gen_cmd->add_option("--out", gen_out, "output file")->capture_default_str();

  ProblemFlags ver;
  int probes = 100;
  std::uint64_t verify_seed = 1;
  bool halve_lbar = false;
  auto* verify_cmd = app.add_subcommand("verify", "check the standing assumptions on a problem");
  add_problem_flags(verify_cmd, ver, "--problem-seed");
  verify_cmd->add_option("--probes", probes, "number of random probes")->capture_default_str();
  verify_cmd->add_option("--seed", verify_seed, "probe seed")->capture_default_str();
  verify_cmd->add_flag("--debug-halve-lbar", halve_lbar, "declare per-component constants at half their value");

  std::vector<std::string> sum_files;
  double sum_eps = 0.0;
  std::string sum_json;
  auto* sum_cmd = app.add_subcommand("summarize", "ops-to-target and rate summaries of traces");
  sum_cmd->add_option("traces", sum_files, "trace CSV files")->required();
  sum_cmd->add_option("--eps", sum_eps, "target duality gap")->required();
  sum_cmd->add_option("--json", sum_json, "also write the summary as JSON ('-' for stdout)");

  std::vector<std::string> plot_files;
  std::string plot_out = ".";
  auto* plot_cmd = app.add_subcommand("plotdata", "two-column (ops, gap) files per solver and batch");
  plot_cmd->add_option("traces", plot_files, "trace CSV files")->required();
  plot_cmd->add_option("--out", plot_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run, *run_cmd);
    if (*gen_cmd) return cmd_gen(gen, gen_out);
    if (*verify_cmd) return cmd_verify(ver, probes, verify_seed, halve_lbar);
    if (*sum_cmd) return cmd_summarize(sum_files, sum_eps, sum_json);
    if (*plot_cmd) return cmd_plotdata(plot_files, plot_out);
  } catch (const bench::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return kIo;
  } catch (const ParseError& e) {
    spdlog::error("parse error: {}", e.what());
    return kIo;
  } catch (const InvalidArgument& e) {
    spdlog::error("invalid argument: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
