// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Reference values come from the naive oracles in
// oracles.hpp, never from the library paths under test.

#include "oracles.hpp"

#include "vibench/bench.hpp"
#include "vibench/metrics.hpp"
#include "vibench/problems.hpp"
#include "vibench/prox.hpp"
#include "vibench/solvers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace vibench;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

int failures = 0;

void criterion(int id, const char* title, double time_limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string detail = out.detail;
  if (secs > time_limit_s) {
    out.pass = false;
    detail += fmt("; runtime %.1f s over the %.0f s limit", secs, time_limit_s);
  }
  if (!out.pass) ++failures;
  std::printf("[%s] %d %s: %s (%.2f s)\n", out.pass ? "PASS" : "FAIL", id, title, detail.c_str(), secs);
  std::fflush(stdout);
}

SolverState state_with(const Vec& x, const Vec& x_prev, const Vec& w_prev, const Vec& f_w_prev, Index M) {
  SolverState s = SolverState::at(x, M);
  s.x_prev = x_prev;
  s.w_prev = w_prev;
  s.f_w_prev = f_w_prev;
  return s;
}

/// (1/M) sum_j (B_j x + c_j), straight from the problem data.
Vec linear_mean(const oracle::LinearFiniteSum& lin, const Vec& x) {
  Vec out = Vec::Zero(x.size());
  for (std::size_t j = 0; j < lin.B.size(); ++j) out += lin.B[j] * x + lin.c[j];
  return out / static_cast<double>(lin.B.size());
}

struct EnumerationStats {
  double worst_bias = 0.0;
  double worst_variance_ratio = 0.0;
  int triples = 0;
};

// Shared by criteria 1 and 2: 20 problems, M = 5, five state triples each,
// all 5 singletons and all 25 ordered pairs.
EnumerationStats enumerate_estimator() {
  constexpr Index kM = 5;
  constexpr Index kDim = 4;
  std::mt19937_64 gen(20240);
  EnumerationStats st;
  for (int problem = 0; problem < 20; ++problem) {
    const auto lin = oracle::random_linear_problem(kDim, kM, gen);
    double sq = 0.0;
    for (const auto& B : lin.B) sq += std::pow(oracle::spectral_norm_svd(B), 2);
    const double L_bar = std::sqrt(sq / kM);
    for (int triple = 0; triple < 5; ++triple) {
      const Vec x = oracle::gaussian_vector(kDim, gen);
      const Vec xp = oracle::gaussian_vector(kDim, gen);
      const Vec wp = oracle::gaussian_vector(kDim, gen);
      const SolverState s = state_with(x, xp, wp, linear_mean(lin, wp), kM);
      const Vec target = 2.0 * linear_mean(lin, x) - linear_mean(lin, xp);
      for (Index b : {1, 2}) {
        const auto batches = oracle::enumerate_batches(kM, b);
        std::vector<Vec> outs;
        Vec mean = Vec::Zero(kDim);
        for (const auto& batch : batches) {
          outs.push_back(delta_estimator(lin.problem, s, batch));
          mean += outs.back();
        }
        mean /= static_cast<double>(batches.size());
        st.worst_bias = std::max(st.worst_bias, (mean - target).norm());
        double var = 0.0;
        for (const auto& o : outs) var += (o - mean).squaredNorm();
        var /= static_cast<double>(batches.size());
        const double bound = 2.0 * L_bar * L_bar / static_cast<double>(b) *
                             ((x - wp).squaredNorm() + (x - xp).squaredNorm());
        st.worst_variance_ratio = std::max(st.worst_variance_ratio, var / bound);
      }
      ++st.triples;
    }
  }
  return st;
}

Matrix pb_matrix(Index d) { return generate_matrix({GeneratorKind::policeman_burglar, d, 1, 0.8}); }

SolverParams oracle_optimal(const MatrixGame& game, Index b, std::uint64_t seed) {
  SolverParams params =
      tune_params_oracle_optimal(game.lipschitz().L, game.lipschitz().L_bar, b, game.num_components()).params;
  params.seed = seed;
  return params;
}

/// Matvec ops at the first trace row with gap_avg <= eps.
std::optional<double> first_ops_at(const RunTrace& t, double eps) {
  for (const auto& r : t.rows)
    if (r.gap_avg <= eps) return r.matvec_ops;
  return std::nullopt;
}

std::string slurp_without_last_column(const fs::path& p) {
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

}  // namespace

int main() {
  std::printf("vibench acceptance suite\n");

  EnumerationStats enumeration;
  criterion(1, "estimator unbiasedness", 1.0, [&] {
    enumeration = enumerate_estimator();
    return Outcome{enumeration.worst_bias <= 1e-12,
                   fmt("max ||mean Delta - (2F(x) - F(x_prev))|| = %.3g over %d triples x b in {1,2} (tol 1e-12)",
                       enumeration.worst_bias, enumeration.triples)};
  });

  criterion(2, "estimator variance bound", 1.0, [&] {
    if (enumeration.triples == 0) enumeration = enumerate_estimator();
    return Outcome{enumeration.worst_variance_ratio <= 1.0 + 1e-8,
                   fmt("max variance / (2 L_bar^2 / b)(|x-w|^2 + |x-x_prev|^2) = %.6f (limit 1 + 1e-8)",
                       enumeration.worst_variance_ratio)};
  });

  criterion(3, "full batch reduces to the optimistic baseline", 1.0, [] {
    std::mt19937_64 gen(33);
    const MatrixGame game(oracle::gaussian_matrix(10, 10, gen));
    const double eta = 1.0 / (4.0 * game.lipschitz().L);
    const SolverParams params{eta, 1.0, 1.0, 10, 100, std::nullopt, 3};
    SolverState a = init_ommb(game, game.center());
    SolverState b = init_popov(game, game.center());
    Rng rng(params.seed);
    for (int k = 0; k < 100; ++k) {
      ommb_step(game, a, params, rng);
      popov_step(game, b, eta);
      const bool same = std::equal(a.x_curr.begin(), a.x_curr.end(), b.x_curr.begin()) &&
                        std::equal(a.avg_sum.begin(), a.avg_sum.end(), b.avg_sum.begin());
      if (!same) return Outcome{false, fmt("iterates differ at step %d", k + 1)};
    }
    return Outcome{true, "100 iterates and running averages bit-identical"};
  });

  criterion(4, "simplex projection", 5.0, [] {
    std::mt19937_64 gen(44);
    std::uniform_real_distribution<double> log_scale(-3.0, 2.0);
    double worst_err = 0.0, worst_mass = 0.0, worst_neg = 0.0;
    for (Index d : {2, 10, 500}) {
      for (int trial = 0; trial < 1000; ++trial) {
        const Vec v = std::pow(10.0, log_scale(gen)) * oracle::gaussian_vector(d, gen);
        const Vec p = project_simplex(v);
        worst_err = std::max(worst_err, (p - oracle::project_simplex_sort(v)).cwiseAbs().maxCoeff());
        worst_mass = std::max(worst_mass, std::abs(p.sum() - 1.0));
        worst_neg = std::max(worst_neg, -p.minCoeff());
      }
    }
    return Outcome{worst_err <= 1e-10 && worst_mass <= 1e-10 && worst_neg <= 0.0,
                   fmt("max coordinate error %.3g, max |sum - 1| %.3g, min coordinate >= 0: %s (tol 1e-10)",
                       worst_err, worst_mass, worst_neg <= 0.0 ? "yes" : "no")};
  });

  criterion(5, "duality gap", 5.0, [] {
    std::mt19937_64 gen(55);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix A = oracle::gaussian_matrix(5, 5, gen);
      const MatrixGame game(A);
      const Vec z = oracle::random_game_point(5, gen);
      worst = std::max(worst, std::abs(game_duality_gap(game, z) - oracle::vertex_scan_gap(A, z)));
    }
    // Saddles known in closed form: (e2, e2) for the skew game, the
    // barycenter for matching pennies.
    Matrix skew(2, 2), pennies(2, 2);
    skew << 0, 1, -1, 0;
    pennies << 1, -1, -1, 1;
    const double g_skew = game_duality_gap(MatrixGame(skew), Vec{{0.0, 1.0, 0.0, 1.0}});
    const double g_pennies = game_duality_gap(MatrixGame(pennies), Vec{{0.5, 0.5, 0.5, 0.5}});
    const double saddle = std::max(std::abs(g_skew), std::abs(g_pennies));
    return Outcome{worst <= 1e-12 && saddle <= 1e-10,
                   fmt("max |gap - vertex scan| = %.3g on 50 games (tol 1e-12); gap at 2x2 saddles %.3g (tol 1e-10)",
                       worst, saddle)};
  });

  criterion(6, "ergodic rate, policeman-burglar d=50, b=1", 120.0, [] {
    const MatrixGame game(pb_matrix(50));
    const SolverParams params = oracle_optimal(game, 1, 1);
    StopCriteria stop;
    stop.max_iters = 100000;
    RunOptions<MatrixGame> opts;
    opts.cadence = 10;
    const RunTrace t = run_ommb(game, params, game.center(), stop, opts);
    // 20 log-spaced rows per decade so the fit is not dominated by the tail.
    std::vector<TraceRow> thinned;
    double next = 100.0;
    for (const auto& r : t.rows) {
      if (static_cast<double>(r.iter) + 0.5 < next) continue;
      thinned.push_back(r);
      while (next <= static_cast<double>(r.iter) + 0.5) next *= std::pow(10.0, 0.05);
    }
    const double slope = slope_estimate(thinned, 100, 100000);
    double best = INFINITY;
    for (const auto& r : t.rows) best = std::min(best, r.gap_avg);
    return Outcome{slope <= -0.8 && best <= 1e-2,
                   fmt("slope %.3f over K in [1e2, 1e5] (need <= -0.8); min gap %.4g (need <= 1e-2); "
                       "eta %.4g, p = gamma = %.4g",
                       slope, best, params.eta, params.p)};
  });

  criterion(7, "batch insensitivity, policeman-burglar d=200", 600.0, [] {
    const MatrixGame game(pb_matrix(200));
    std::string detail;
    double lo = INFINITY, hi = 0.0;
    bool all = true;
    for (Index b : {1, 2, 4, 8, 16}) {
      const SolverParams params = oracle_optimal(game, b, 1);
      const double per_iter = (3.0 * b + params.p * 200.0) / 200.0;
      StopCriteria stop;
      stop.max_iters = std::numeric_limits<std::int64_t>::max();
      stop.max_ops = 6e5;
      stop.target_gap = 1e-2;
      RunOptions<MatrixGame> opts;
      opts.cadence = std::max<std::int64_t>(1, std::llround(25.0 / per_iter));
      const RunTrace t = run_ommb(game, params, game.center(), stop, opts);
      const auto ops = first_ops_at(t, 1e-2);
      detail += fmt("%sb=%ld: %s", detail.empty() ? "" : ", ", static_cast<long>(b),
                    ops ? fmt("%.0f", *ops).c_str() : "not reached in 6e5 ops");
      if (!ops) {
        all = false;
        continue;
      }
      lo = std::min(lo, *ops);
      hi = std::max(hi, *ops);
    }
    const double ratio = all ? hi / lo : INFINITY;
    return Outcome{all && ratio <= 4.0, detail + fmt("; max/min %.2f (need <= 4)", ratio)};
  });

  criterion(8, "advantage over extragradient, policeman-burglar d=200", 600.0, [] {
    const MatrixGame game(pb_matrix(200));
    auto& reg = SolverRegistry<MatrixGame>::global();
    SolverConfig eg_cfg;
    eg_cfg.tuning = "default";
    auto eg = reg.create("eg", game, eg_cfg);
    StopCriteria eg_stop;
    eg_stop.max_iters = 1000000;
    eg_stop.target_gap = 1e-2;
    RunOptions<MatrixGame> eg_opts;
    eg_opts.cadence = 1;
    Rng unused(0);
    const RunTrace eg_trace = run_solver(game, *eg.solver, game.center(), unused, eg_stop, eg_opts);
    const auto eg_ops = first_ops_at(eg_trace, 1e-2);
    if (!eg_ops) return Outcome{false, "extragradient did not reach 1e-2"};

    SolverParams params = oracle_optimal(game, 1, 1);
    StopCriteria stop;
    stop.max_iters = std::numeric_limits<std::int64_t>::max();
    stop.max_ops = *eg_ops;
    stop.target_gap = 1e-2;
    RunOptions<MatrixGame> opts;
    opts.cadence = 1250;  // 25 ops at b = 1, p = 1/M
    const RunTrace t = run_ommb(game, params, game.center(), stop, opts);
    const auto ops = first_ops_at(t, 1e-2);
    const double final_gap = t.rows.empty() ? NAN : t.rows.back().gap_avg;
    return Outcome{ops && *ops < *eg_ops,
                   fmt("extragradient (eta = 1/(2L)) reaches 1e-2 at %.0f ops; OMMB b=1, p=1/M: %s", *eg_ops,
                       ops ? fmt("%.0f ops", *ops).c_str()
                           : fmt("gap %.4g at the same budget", final_gap).c_str())};
  });

  criterion(9, "determinism and accounting audit", 60.0, [] {
    const fs::path root = fs::temp_directory_path() / "vibench_acceptance";
    fs::remove_all(root);
    bench::ExperimentConfig cfg;
    cfg.problem.generator = GeneratorSpec{GeneratorKind::policeman_burglar, 30, 5, 0.8};
    cfg.solvers = {bench::default_solver_entry("ommb"), bench::default_solver_entry("eg"),
                   bench::default_solver_entry("popov")};
    cfg.batch_sizes = {1, 3, 30};
    cfg.seeds = {1, 2};
    cfg.max_iters = 3000;
    cfg.cadence = 50;
    cfg.record_time = true;
    auto cfg_a = cfg, cfg_b = cfg;
    cfg_a.output_dir = root / "a";
    cfg_a.jobs = 1;
    cfg_b.output_dir = root / "b";
    cfg_b.jobs = 2;
    const auto ra = bench::run_experiment(cfg_a);
    bench::run_experiment(cfg_b);

    int files = 0, mismatched = 0;
    for (const auto& entry : fs::directory_iterator(cfg_a.output_dir)) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      if (slurp_without_last_column(entry.path()) !=
          slurp_without_last_column(cfg_b.output_dir / entry.path().filename()))
        ++mismatched;
    }
    const std::int64_t M = 30;
    long rows = 0, bad_rows = 0;
    for (const auto& r : ra.runs) {
      if (r.plan.solver.name != "ommb") continue;
      const auto on_disk = load_trace_csv(cfg_a.output_dir / (r.plan.stem + ".csv"));
      if (on_disk.size() != r.trace.rows.size()) ++bad_rows;
      for (std::size_t i = 0; i < r.trace.rows.size(); ++i) {
        const TraceRow& row = r.trace.rows[i];
        ++rows;
        const bool ok = row.component_evals == 3 * r.plan.batch * row.iter + M * row.refreshes + M &&
                        i < on_disk.size() && on_disk[i].component_evals == row.component_evals;
        if (!ok) ++bad_rows;
      }
    }
    fs::remove_all(root);
    return Outcome{files == 10 && mismatched == 0 && bad_rows == 0,
                   fmt("%d traces, %d differ between 1 and 2 worker threads; %ld OMMB rows audited, %ld violate "
                       "component_evals = 3bk + M*refreshes + M",
                       files, mismatched, rows, bad_rows)};
  });

  std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ALL PASS" : "SOME FAIL", failures);
  return failures == 0 ? 0 : 1;
}
