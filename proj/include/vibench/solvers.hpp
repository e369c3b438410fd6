#pragma once

#include "vibench/common.hpp"
#include "vibench/metrics.hpp"
#include "vibench/problems.hpp"
#include "vibench/prox.hpp"
#include "vibench/random.hpp"
#include "vibench/trace.hpp"
#include "vibench/vi_core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace vibench {

// ---------------------------------------------------------------------------
// State and per-step records

/// Iterates of one run. Owned by a single run; never shared.
struct SolverState {
  Vec x_curr;    // x^k
  Vec x_prev;    // x^{k-1}
  Vec w_curr;    // w^k
  Vec w_prev;    // w^{k-1}
  Vec f_w_curr;  // F(w^k)
  Vec f_w_prev;  // F(w^{k-1})
  Vec f_x_prev;  // F(x^{k-1}), used by the optimistic baseline
  Vec avg_sum;   // running sum of the averaged iterates
  std::int64_t k = 0;
  std::int64_t averaged = 0;
  std::int64_t snapshot_refreshes = 0;
  OpAccount account;

  /// x^0 = w^0 = x^{-1} = w^{-1} = x0, no operator values yet.
  static SolverState at(const Vec& x0, Index num_components) {
    SolverState s;
    s.x_curr = s.x_prev = s.w_curr = s.w_prev = x0;
    s.avg_sum = Vec::Zero(x0.size());
    s.account.num_components = num_components;
    return s;
  }

  /// Ergodic mean of the averaged iterates (x0 before the first step).
  Vec average() const {
    if (averaged == 0) return x_curr;
    return avg_sum / static_cast<double>(averaged);
  }

  void accumulate(const Vec& v) {
    avg_sum += v;
    ++averaged;
  }
};

struct StepRecord {
  std::int64_t iteration = 0;
  std::vector<Index> batch;
  bool snapshot_refreshed = false;
  std::int64_t component_evals = 0;
  double step_norm = 0.0;           // ||x^{k+1} - x^k||
  double snapshot_distance = 0.0;   // ||x^{k+1} - w^k||
};

struct StepOptions {
  /// Recompute F(w^{k-1}) from scratch each step and compare bitwise.
  bool debug_checks = false;
};

inline constexpr double kDivergenceNorm = 1e12;

namespace detail {

inline void check_finite_iterate(const Vec& next, const SolverState& state) {
  // NaN and Inf fail the comparison too.
  if (!(next.squaredNorm() <= kDivergenceNorm * kDivergenceNorm))
    throw DivergenceError("iterate diverged at iteration " + std::to_string(state.k) +
                              " (non-finite or norm above 1e12)",
                          state.k, state.x_curr);
}

// 2 F(x^k) - F(x^{k-1}); shared by the optimistic baseline and the
// full-batch reduction so the two produce identical bits.
inline void optimistic_combination(const Vec& f_curr, const Vec& f_prev, Vec& out) {
  out = 2.0 * f_curr - f_prev;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Variance-reduced optimistic estimator

/// Delta = (1/b) sum_{j in batch} [F_j(x^k) - F_j(w^{k-1}) + F_j(x^k) - F_j(x^{k-1})]
///         + F(w^{k-1}).
/// Costs 3b component evaluations; F(w^{k-1}) comes from the state cache.
/// Indices are 0-based and may repeat.
template <FiniteSumOperator P>
void delta_estimator(const P& problem, const SolverState& state, std::span<const Index> batch, Vec& out) {
  require(!batch.empty(), "delta_estimator: empty batch");
  require(state.f_w_prev.size() == problem.dim(), "delta_estimator: F(w^{k-1}) cache not initialised");
  Vec acc = Vec::Zero(problem.dim());
  for (Index j : batch) {
    problem.add_component(j, state.x_curr, 2.0, acc);
    problem.add_component(j, state.w_prev, -1.0, acc);
    problem.add_component(j, state.x_prev, -1.0, acc);
  }
  out = acc / static_cast<double>(batch.size()) + state.f_w_prev;
}

template <FiniteSumOperator P>
Vec delta_estimator(const P& problem, const SolverState& state, std::span<const Index> batch) {
  Vec out;
  delta_estimator(problem, state, batch, out);
  return out;
}

/// Start state of the optimistic method with momentum: caches F(x0) as
/// F(w^{-1}) (and F(w^0)), charging one full evaluation.
template <FiniteSumOperator P>
SolverState init_ommb(const P& problem, const Vec& x0) {
  require(x0.size() == problem.dim(), "init_ommb: starting point has wrong dimension");
  SolverState s = SolverState::at(x0, problem.num_components());
  problem.eval_full(x0, s.f_w_prev);
  s.f_w_curr = s.f_w_prev;
  s.account.charge_full();
  return s;
}

/// One iteration of the optimistic method with momentum and batching:
///
///   sample j_1..j_b uniformly with replacement
///   x^{k+1} = prox_{eta g}(x^k + gamma (w^k - x^k) - eta Delta^k)
///   w^{k+1} = x^{k+1} with probability p, else w^k
///
/// RNG draws: b indices, then one Bernoulli. When b = M the batch is the
/// full index set (no index draws) and Delta collapses to
/// 2 F(x^k) - F(x^{k-1}); 3M evaluations are still charged.
template <FiniteSumOperator P>
StepRecord ommb_step(const P& problem, SolverState& state, const SolverParams& params, Rng& rng,
                     const StepOptions& options = {}) {
  const Index M = problem.num_components();
  const Index b = params.batch;
  StepRecord rec;
  rec.iteration = state.k;

  if (options.debug_checks) {
    Vec fresh;
    problem.eval_full(state.w_prev, fresh);
    if (fresh.size() != state.f_w_prev.size() ||
        !std::equal(fresh.begin(), fresh.end(), state.f_w_prev.begin()))
      throw InvariantViolation("cached F(w^{k-1}) is stale at iteration " + std::to_string(state.k));
  }

  Vec delta;
  if (b == M) {
    Vec f_curr, f_prev;
    problem.eval_full(state.x_curr, f_curr);
    problem.eval_full(state.x_prev, f_prev);
    detail::optimistic_combination(f_curr, f_prev, delta);
  } else {
    rec.batch.resize(static_cast<std::size_t>(b));
    for (auto& j : rec.batch) j = static_cast<Index>(rng.index(static_cast<std::uint64_t>(M)));
    delta_estimator(problem, state, std::span<const Index>(rec.batch), delta);
  }
  rec.component_evals = 3 * b;
  state.account.charge_components(3 * b);

  Vec next;
  problem.prox(params.eta, Vec(state.x_curr + params.gamma * (state.w_curr - state.x_curr) - params.eta * delta),
               next);
  detail::check_finite_iterate(next, state);

  const bool refresh = rng.bernoulli(params.p);
  rec.snapshot_refreshed = refresh;
  rec.step_norm = (next - state.x_curr).norm();
  rec.snapshot_distance = (next - state.w_curr).norm();

  state.x_prev = std::move(state.x_curr);
  state.x_curr = std::move(next);
  state.w_prev = state.w_curr;
  state.f_w_prev = state.f_w_curr;
  if (refresh) {
    state.w_curr = state.x_curr;
    problem.eval_full(state.w_curr, state.f_w_curr);
    state.account.charge_full();
    rec.component_evals += M;
    ++state.snapshot_refreshes;
  }
  state.accumulate(state.x_curr);
  ++state.k;
  return rec;
}

// ---------------------------------------------------------------------------
// Deterministic baselines

/// ExtraGradient: y = prox(x - eta F(x)), x+ = prox(x - eta F(y)); averages y.
template <FiniteSumOperator P>
StepRecord extragradient_step(const P& problem, SolverState& state, double eta) {
  require(eta > 0.0, "extragradient_step: eta must be positive");
  StepRecord rec;
  rec.iteration = state.k;
  Vec fx, fy, y, next;
  problem.eval_full(state.x_curr, fx);
  problem.prox(eta, Vec(state.x_curr - eta * fx), y);
  problem.eval_full(y, fy);
  problem.prox(eta, Vec(state.x_curr - eta * fy), next);
  detail::check_finite_iterate(y, state);
  detail::check_finite_iterate(next, state);
  state.account.charge_full();
  state.account.charge_full();
  rec.component_evals = 2 * problem.num_components();
  rec.step_norm = (next - state.x_curr).norm();
  state.x_prev = std::move(state.x_curr);
  state.x_curr = std::move(next);
  state.accumulate(y);
  ++state.k;
  return rec;
}

/// Start state of the optimistic baseline: F(x^{-1}) = F(x0) cached.
template <FiniteSumOperator P>
SolverState init_popov(const P& problem, const Vec& x0) {
  require(x0.size() == problem.dim(), "init_popov: starting point has wrong dimension");
  SolverState s = SolverState::at(x0, problem.num_components());
  problem.eval_full(x0, s.f_x_prev);
  s.account.charge_full();
  return s;
}

/// Optimistic (Popov) step x^{k+1} = prox(x^k - eta (2 F(x^k) - F(x^{k-1}))),
/// one full evaluation per step.
template <FiniteSumOperator P>
StepRecord popov_step(const P& problem, SolverState& state, double eta) {
  require(eta > 0.0, "popov_step: eta must be positive");
  require(state.f_x_prev.size() == problem.dim(), "popov_step: state not initialised with init_popov");
  StepRecord rec;
  rec.iteration = state.k;
  Vec f_curr, delta, next;
  problem.eval_full(state.x_curr, f_curr);
  detail::optimistic_combination(f_curr, state.f_x_prev, delta);
  problem.prox(eta, Vec(state.x_curr - eta * delta), next);
  detail::check_finite_iterate(next, state);
  state.account.charge_full();
  rec.component_evals = problem.num_components();
  rec.step_norm = (next - state.x_curr).norm();
  state.x_prev = std::move(state.x_curr);
  state.x_curr = std::move(next);
  state.f_x_prev = std::move(f_curr);
  state.accumulate(state.x_curr);
  ++state.k;
  return rec;
}

// ---------------------------------------------------------------------------
// Solver interface

/// A stateful iterative method bound to one problem.
template <FiniteSumOperator P>
class Solver {
 public:
  virtual ~Solver() = default;
  virtual std::string name() const = 0;
  virtual void initialize(const Vec& x0) = 0;
  virtual StepRecord step(Rng& rng) = 0;
  virtual const SolverState& state() const = 0;
  /// Step size used for the residual diagnostic.
  virtual double step_size() const = 0;
  /// Parameters as recorded in trace metadata.
  virtual SolverParams params() const = 0;
  /// Expected matvec-equivalent cost per iteration.
  virtual double expected_ops_per_iter() const = 0;
};

template <FiniteSumOperator P>
class OmmbSolver final : public Solver<P> {
 public:
  OmmbSolver(const P& problem, SolverParams params, StepOptions options = {})
      : problem_(problem), params_(params), options_(options) {
    params_.validate(problem.num_components());
  }
  std::string name() const override { return "ommb"; }
  void initialize(const Vec& x0) override { state_ = init_ommb(problem_, x0); }
  StepRecord step(Rng& rng) override { return ommb_step(problem_, state_, params_, rng, options_); }
  const SolverState& state() const override { return state_; }
  double step_size() const override { return params_.eta; }
  SolverParams params() const override { return params_; }
  double expected_ops_per_iter() const override {
    const double M = static_cast<double>(problem_.num_components());
    return (3.0 * static_cast<double>(params_.batch) + params_.p * M) / M;
  }

 private:
  const P& problem_;
  SolverParams params_;
  StepOptions options_;
  SolverState state_;
};

template <FiniteSumOperator P>
class ExtragradientSolver final : public Solver<P> {
 public:
  ExtragradientSolver(const P& problem, double eta) : problem_(problem), eta_(eta) {
    require(eta > 0.0, "extragradient: eta must be positive");
  }
  std::string name() const override { return "eg"; }
  void initialize(const Vec& x0) override {
    require(x0.size() == problem_.dim(), "extragradient: starting point has wrong dimension");
    state_ = SolverState::at(x0, problem_.num_components());
  }
  StepRecord step(Rng&) override { return extragradient_step(problem_, state_, eta_); }
  const SolverState& state() const override { return state_; }
  double step_size() const override { return eta_; }
  SolverParams params() const override {
    SolverParams p;
    p.eta = eta_;
    p.batch = problem_.num_components();
    return p;
  }
  double expected_ops_per_iter() const override { return 2.0; }

 private:
  const P& problem_;
  double eta_;
  SolverState state_;
};

template <FiniteSumOperator P>
class PopovSolver final : public Solver<P> {
 public:
  PopovSolver(const P& problem, double eta) : problem_(problem), eta_(eta) {
    require(eta > 0.0, "popov: eta must be positive");
  }
  std::string name() const override { return "popov"; }
  void initialize(const Vec& x0) override { state_ = init_popov(problem_, x0); }
  StepRecord step(Rng&) override { return popov_step(problem_, state_, eta_); }
  const SolverState& state() const override { return state_; }
  double step_size() const override { return eta_; }
  SolverParams params() const override {
    SolverParams p;
    p.eta = eta_;
    p.batch = problem_.num_components();
    return p;
  }
  double expected_ops_per_iter() const override { return 1.0; }

 private:
  const P& problem_;
  double eta_;
  SolverState state_;
};

// ---------------------------------------------------------------------------
// Registry

/// What a factory receives besides the problem.
struct SolverConfig {
  /// "theorem" (p = gamma = min(b/M, 1/16), theorem step size), "manual"
  /// (params used as given) or "default" (baseline step sizes).
  std::string tuning = "theorem";
  SolverParams params;
  /// With tuning = "theorem": fixes p = gamma instead of min(b/M, 1/16).
  std::optional<double> gamma;
  StepOptions step_options;
};

/// A solver together with tuning diagnostics.
template <FiniteSumOperator P>
struct SolverInstance {
  std::unique_ptr<Solver<P>> solver;
  bool theorem_mode = false;
  bool clamped = false;
  std::vector<std::string> warnings;
};

template <FiniteSumOperator P>
class SolverRegistry {
 public:
  using Factory = std::function<SolverInstance<P>(const P&, const SolverConfig&)>;

  void register_solver(const std::string& name, Factory factory) {
    std::lock_guard lock(mutex_);
    if (name.empty()) throw InvalidArgument("solver name must be non-empty");
    if (factories_.count(name)) throw InvalidArgument("solver '" + name + "' is already registered");
    factories_.emplace(name, std::move(factory));
  }

  bool contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.count(name) > 0;
  }

  std::vector<std::string> names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [name, _] : factories_) out.push_back(name);
    return out;
  }

  SolverInstance<P> create(const std::string& name, const P& problem, const SolverConfig& config) const {
    Factory factory;
    {
      std::lock_guard lock(mutex_);
      auto it = factories_.find(name);
      if (it == factories_.end()) {
        std::string known;
        for (const auto& [n, _] : factories_) known += (known.empty() ? "" : ", ") + n;
        throw InvalidArgument("unknown solver '" + name + "'; registered solvers: " + known);
      }
      factory = it->second;
    }
    return factory(problem, config);
  }

  /// Adds "ommb", "eg" and "popov".
  void register_builtins() {
    SolverRegistry& r = *this;
    r.register_solver("ommb", make_ommb);
    r.register_solver("eg", [](const P& problem, const SolverConfig& config) {
      SolverInstance<P> inst;
      const double eta = config.tuning == "manual" ? config.params.eta : 1.0 / (2.0 * baseline_L(problem));
      inst.solver = std::make_unique<ExtragradientSolver<P>>(problem, eta);
      return inst;
    });
    r.register_solver("popov", [](const P& problem, const SolverConfig& config) {
      SolverInstance<P> inst;
      const double eta = config.tuning == "manual" ? config.params.eta : 1.0 / (4.0 * baseline_L(problem));
      inst.solver = std::make_unique<PopovSolver<P>>(problem, eta);
      return inst;
    });
  }

  /// Process-wide registry used by the benchmark harness.
  static SolverRegistry& global() {
    static SolverRegistry& instance = [] () -> SolverRegistry& {
      static SolverRegistry r;
      r.register_builtins();
      return r;
    }();
    return instance;
  }

 private:
  static double baseline_L(const P& problem) {
    const double L = problem.lipschitz().L;
    if (!(L > 0.0)) throw InvalidArgument("baseline step size needs a positive Lipschitz constant L");
    return L;
  }

  static SolverInstance<P> make_ommb(const P& problem, const SolverConfig& config) {
    SolverInstance<P> inst;
    SolverParams params = config.params;
    const Index M = problem.num_components();
    const auto& lip = problem.lipschitz();
    if (config.tuning == "theorem") {
      const TunedParams tuned = config.gamma ? tune_params(lip.L, lip.L_bar, params.batch, *config.gamma, M)
                                             : tune_params_oracle_optimal(lip.L, lip.L_bar, params.batch, M);
      params.eta = tuned.params.eta;
      params.gamma = tuned.params.gamma;
      params.p = tuned.params.p;
      inst.clamped = tuned.clamped;
      if (tuned.clamped)
        inst.warnings.push_back("p = b/M exceeded 1/16 and was clamped to 1/16");
      if (tuned.large_batch_warning)
        inst.warnings.push_back("batch exceeds L_bar sqrt(M) / L; the b L / eps term dominates");
    } else if (config.tuning != "manual") {
      throw InvalidArgument("ommb: unknown tuning '" + config.tuning + "' (expected theorem or manual)");
    }
    inst.theorem_mode = params.theorem_mode();
    if (!inst.theorem_mode) inst.warnings.push_back("parameters outside the convergence theorem's hypothesis");
    inst.solver = std::make_unique<OmmbSolver<P>>(problem, params, config.step_options);
    return inst;
  }

  mutable std::mutex mutex_;
  std::map<std::string, Factory> factories_;
};

template <FiniteSumOperator P>
void register_solver(const std::string& name, typename SolverRegistry<P>::Factory factory) {
  SolverRegistry<P>::global().register_solver(name, std::move(factory));
}

// ---------------------------------------------------------------------------
// Run driver

struct StopCriteria {
  std::int64_t max_iters = 0;
  std::optional<double> max_ops;
  std::optional<double> target_gap;
};

template <FiniteSumOperator P>
struct RunOptions {
  /// Trace row every `cadence` iterations (and at the final one).
  std::int64_t cadence = 100;
  /// Gap measure of a point; NaN when the problem has none.
  std::function<double(const P&, const Vec&)> gap;
  std::function<void(const StepRecord&, const SolverState&)> on_step;
};

/// Divergence with the rows recorded before it.
class RunDivergedError : public DivergenceError {
 public:
  RunDivergedError(const DivergenceError& cause, RunTrace partial)
      : DivergenceError(cause.what(), cause.iteration(), cause.last_finite()), partial_(std::move(partial)) {}
  const RunTrace& partial() const noexcept { return partial_; }

 private:
  RunTrace partial_;
};

/// Gap for games, NaN otherwise.
template <FiniteSumOperator P>
double default_gap(const P& problem, const Vec& z) {
  if constexpr (std::is_same_v<P, MatrixGame>) {
    return game_duality_gap(problem, z);
  } else {
    (void)problem;
    (void)z;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

/// Drives `solver` from x0 until max_iters, the op budget or the target gap
/// (checked on trace rows only). Gap evaluations are never charged.
template <FiniteSumOperator P>
RunTrace run_solver(const P& problem, Solver<P>& solver, const Vec& x0, Rng& rng, const StopCriteria& stop,
                    const RunOptions<P>& options = {}) {
  require(options.cadence >= 1, "run_solver: cadence must be >= 1");
  require(stop.max_iters >= 0, "run_solver: max_iters must be nonnegative");
  const auto gap = options.gap ? options.gap : std::function<double(const P&, const Vec&)>(default_gap<P>);
  const auto start = std::chrono::steady_clock::now();

  RunTrace trace;
  const SolverParams params = solver.params();
  trace.meta.solver = solver.name();
  trace.meta.eta = params.eta;
  trace.meta.gamma = params.gamma;
  trace.meta.p = params.p;
  trace.meta.batch = params.batch;
  trace.meta.seed = params.seed;
  trace.meta.num_components = problem.num_components();
  trace.meta.dim = problem.dim();
  trace.meta.expected_ops_per_iter = solver.expected_ops_per_iter();

  solver.initialize(x0);

  auto record_row = [&]() -> double {
    const SolverState& s = solver.state();
    TraceRow row;
    row.iter = s.k;
    row.component_evals = s.account.component_evals;
    row.matvec_ops = s.account.matvec_ops();
    const Vec avg = s.average();
    row.gap_avg = gap(problem, avg);
    row.gap_last = gap(problem, s.x_curr);
    row.residual = prox_residual(problem, avg, solver.step_size());
    row.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                         .count();
    row.refreshes = s.snapshot_refreshes;
    trace.rows.push_back(row);
    return row.gap_avg;
  };

  auto finish = [&](RunStatus status) {
    const SolverState& s = solver.state();
    trace.meta.status = status;
    trace.meta.iterations = s.k;
    trace.meta.snapshot_refreshes = s.snapshot_refreshes;
    trace.average = s.average();
    trace.last_iterate = s.x_curr;
  };

  RunStatus status = RunStatus::completed;
  try {
    while (solver.state().k < stop.max_iters) {
      const StepRecord rec = solver.step(rng);
      if (options.on_step) options.on_step(rec, solver.state());
      const SolverState& s = solver.state();
      const bool over_budget = stop.max_ops && s.account.matvec_ops() >= *stop.max_ops;
      const bool last = s.k >= stop.max_iters || over_budget;
      if (s.k % options.cadence == 0 || last) {
        const double g = record_row();
        if (stop.target_gap && g <= *stop.target_gap) {
          status = RunStatus::target_reached;
          break;
        }
      }
      if (over_budget) {
        status = RunStatus::budget_exhausted;
        break;
      }
    }
  } catch (const DivergenceError& e) {
    finish(RunStatus::diverged);
    throw RunDivergedError(e, std::move(trace));
  }
  finish(status);
  return trace;
}

/// Runs the optimistic method with momentum from x0 with the seed in params.
template <FiniteSumOperator P>
RunTrace run_ommb(const P& problem, const SolverParams& params, const Vec& x0, const StopCriteria& stop,
                  const RunOptions<P>& options = {}, const StepOptions& step_options = {}) {
  OmmbSolver<P> solver(problem, params, step_options);
  Rng rng(params.seed);
  RunTrace trace = run_solver(problem, solver, x0, rng, stop, options);
  trace.meta.theorem_mode = params.theorem_mode();
  return trace;
}

}  // namespace vibench
