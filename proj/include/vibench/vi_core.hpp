#pragma once

#include "vibench/common.hpp"
#include "vibench/random.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vibench {

// ---------------------------------------------------------------------------
// Lipschitz data

/// Lipschitz constants of a finite-sum operator F = (1/M) sum_m F_m:
/// L for F itself, L_m per component, and the quadratic mean L_bar.
struct LipschitzData {
  double L = 0.0;
  std::vector<double> per_component;
  double L_bar = 0.0;

  /// Builds the record with L_bar^2 = mean(L_m^2).
  static LipschitzData from_components(double L, std::vector<double> per_component) {
    for (double v : per_component)
      require(std::isfinite(v) && v >= 0.0, "Lipschitz constants must be finite and nonnegative");
    require(std::isfinite(L) && L >= 0.0, "Lipschitz constant L must be finite and nonnegative");
    LipschitzData out;
    out.L = L;
    out.L_bar = quadratic_mean(per_component);
    out.per_component = std::move(per_component);
    return out;
  }

  static double quadratic_mean(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double sum_sq = 0.0;
    for (double v : values) sum_sq += v * v;
    return std::sqrt(sum_sq / static_cast<double>(values.size()));
  }

  /// L_bar agrees with the per-component list and L <= L_bar.
  bool consistent() const {
    const double expected = quadratic_mean(per_component);
    const double sq = L_bar * L_bar;
    const double esq = expected * expected;
    const bool mean_ok = std::abs(sq - esq) <= 1e-12 * std::max(esq, std::numeric_limits<double>::min());
    const bool order_ok = L <= L_bar + 1e-12 * L_bar;
    return mean_ok && order_ok;
  }
};

// ---------------------------------------------------------------------------
// Prox-friendly functions

/// A proper closed convex g given through its prox, its value (+inf outside
/// dom g) and a membership test.
struct ProxFriendlyFunction {
  std::function<Vec(double, const Vec&)> prox_map;
  std::function<double(const Vec&)> value;
  std::function<bool(const Vec&)> domain_test;

  /// g = 0 on the whole space.
  static ProxFriendlyFunction zero() {
    return {[](double, const Vec& x) { return x; }, [](const Vec&) { return 0.0; },
            [](const Vec& x) { return x.allFinite(); }};
  }

  /// g(x1, x2) = g1(x1) + g2(x2) with x1 of dimension dim1.
  static ProxFriendlyFunction product(ProxFriendlyFunction g1, Index dim1, ProxFriendlyFunction g2,
                                      Index dim2) {
    auto split_check = [dim1, dim2](const Vec& x) {
      if (x.size() != dim1 + dim2)
        throw InvalidArgument("product prox: point of dimension " + std::to_string(x.size()) +
                              " does not match block dims " + std::to_string(dim1) + " + " +
                              std::to_string(dim2));
    };
    ProxFriendlyFunction out;
    out.prox_map = [=](double alpha, const Vec& x) {
      split_check(x);
      Vec y(dim1 + dim2);
      y.head(dim1) = g1.prox_map(alpha, x.head(dim1));
      y.tail(dim2) = g2.prox_map(alpha, x.tail(dim2));
      return y;
    };
    out.value = [=](const Vec& x) {
      split_check(x);
      return g1.value(x.head(dim1)) + g2.value(x.tail(dim2));
    };
    out.domain_test = [=](const Vec& x) {
      split_check(x);
      return g1.domain_test(x.head(dim1)) && g2.domain_test(x.tail(dim2));
    };
    return out;
  }
};

// ---------------------------------------------------------------------------
// Finite-sum operators

/// What a solver needs from a problem. `add_component(j, z, s, out)` performs
/// out += s * F_j(z) with 0-based j; `eval_full` overwrites out with F(z).
template <class P>
concept FiniteSumOperator = requires(const P& p, const Vec& z, Vec& out, Index j, double s) {
  { p.dim() } -> std::convertible_to<Index>;
  { p.num_components() } -> std::convertible_to<Index>;
  p.eval_full(z, out);
  p.add_component(j, z, s, out);
  p.prox(s, z, out);
  { p.g_value(z) } -> std::convertible_to<double>;
  { p.in_domain(z) } -> std::convertible_to<bool>;
  { p.lipschitz() } -> std::convertible_to<const LipschitzData&>;
};

/// Type-erased finite-sum VI instance: find x* in dom g with
/// <F(x*), x - x*> + g(x) - g(x*) >= 0 for all x, F = (1/M) sum_j F_j.
///
/// Immutable after construction and safe to share across threads as long as
/// the supplied callables are.
class FiniteSumProblem {
 public:
  using ComponentFn = std::function<Vec(Index, const Vec&)>;
  using FullFn = std::function<Vec(const Vec&)>;

  /// When `full_eval` is empty the full operator is the arithmetic mean of
  /// the components.
  FiniteSumProblem(Index dim, Index num_components, ComponentFn component_eval, FullFn full_eval,
                   ProxFriendlyFunction g, LipschitzData lipschitz)
      : dim_(dim),
        num_components_(num_components),
        component_eval_(std::move(component_eval)),
        full_eval_(std::move(full_eval)),
        g_(std::move(g)),
        lipschitz_(std::move(lipschitz)) {
    require(dim_ >= 1, "problem dimension must be positive");
    require(num_components_ >= 1, "number of components must be positive");
    require(static_cast<bool>(component_eval_), "component evaluator is required");
    require(static_cast<Index>(lipschitz_.per_component.size()) == num_components_,
            "LipschitzData must list one constant per component");
  }

  Index dim() const { return dim_; }
  Index num_components() const { return num_components_; }
  const LipschitzData& lipschitz() const { return lipschitz_; }
  const ProxFriendlyFunction& regularizer() const { return g_; }

  Vec component(Index j, const Vec& z) const {
    check_index(j);
    check_point(z);
    Vec v = component_eval_(j, z);
    if (v.size() != dim_)
      throw InvalidArgument("component " + std::to_string(j) + " returned dimension " +
                            std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    return v;
  }

  Vec full(const Vec& z) const {
    check_point(z);
    if (full_eval_) {
      Vec v = full_eval_(z);
      if (v.size() != dim_) throw InvalidArgument("full operator returned wrong dimension");
      return v;
    }
    Vec sum = Vec::Zero(dim_);
    for (Index j = 0; j < num_components_; ++j) sum += component(j, z);
    return sum / static_cast<double>(num_components_);
  }

  void eval_full(const Vec& z, Vec& out) const { out = full(z); }

  void add_component(Index j, const Vec& z, double scale, Vec& out) const {
    out += scale * component(j, z);
  }

  void prox(double alpha, const Vec& x, Vec& out) const { out = g_.prox_map(alpha, x); }
  double g_value(const Vec& x) const { return g_.value(x); }
  bool in_domain(const Vec& x) const { return g_.domain_test(x); }

  /// Same operator with different declared constants (used to exercise the
  /// verifier against deliberately wrong data).
  FiniteSumProblem with_lipschitz(LipschitzData lipschitz) const {
    FiniteSumProblem copy = *this;
    require(static_cast<Index>(lipschitz.per_component.size()) == num_components_,
            "LipschitzData must list one constant per component");
    copy.lipschitz_ = std::move(lipschitz);
    return copy;
  }

 private:
  void check_index(Index j) const {
    if (j < 0 || j >= num_components_)
      throw InvalidArgument("component index " + std::to_string(j) + " out of range [0, " +
                            std::to_string(num_components_) + ")");
  }
  void check_point(const Vec& z) const {
    if (z.size() != dim_)
      throw InvalidArgument("point of dimension " + std::to_string(z.size()) +
                            " passed to problem of dimension " + std::to_string(dim_));
  }

  Index dim_;
  Index num_components_;
  ComponentFn component_eval_;
  FullFn full_eval_;
  ProxFriendlyFunction g_;
  LipschitzData lipschitz_;
};

static_assert(FiniteSumOperator<FiniteSumProblem>);

// ---------------------------------------------------------------------------
// Saddle-point reduction

/// Finite-sum convex-concave f(x1, x2) = (1/M) sum_m f_m(x1, x2) given by
/// its partial gradients per summand.
struct SaddleFunction {
  Index dim_x = 0;
  Index dim_y = 0;
  Index num_components = 1;
  std::function<Vec(Index, const Vec&, const Vec&)> grad_x;
  std::function<Vec(Index, const Vec&, const Vec&)> grad_y;
};

/// Stacks F_m(x1, x2) = [grad_x f_m, -grad_y f_m] with g = g1 + g2.
inline FiniteSumProblem make_saddle_problem(SaddleFunction f, ProxFriendlyFunction g1,
                                            ProxFriendlyFunction g2, LipschitzData lipschitz) {
  require(f.dim_x >= 1 && f.dim_y >= 1, "saddle problem block dimensions must be positive");
  require(f.grad_x && f.grad_y, "saddle problem needs both partial gradients");
  const Index dx = f.dim_x;
  const Index dy = f.dim_y;
  auto component = [f = std::move(f), dx, dy](Index m, const Vec& z) {
    const Vec x = z.head(dx);
    const Vec y = z.tail(dy);
    Vec gx = f.grad_x(m, x, y);
    Vec gy = f.grad_y(m, x, y);
    if (gx.size() != dx || gy.size() != dy)
      throw InvalidArgument("saddle gradient dimension mismatch: got (" + std::to_string(gx.size()) +
                            ", " + std::to_string(gy.size()) + "), declared (" + std::to_string(dx) +
                            ", " + std::to_string(dy) + ")");
    Vec out(dx + dy);
    out.head(dx) = gx;
    out.tail(dy) = -gy;
    return out;
  };
  const Index m = static_cast<Index>(lipschitz.per_component.size());
  return FiniteSumProblem(dx + dy, m, std::move(component), {},
                          ProxFriendlyFunction::product(std::move(g1), dx, std::move(g2), dy),
                          std::move(lipschitz));
}

// ---------------------------------------------------------------------------
// Parameters

/// Parameters of the optimistic method with momentum and batching.
/// gamma = 0 and p = 1 are admitted for the deterministic-reduction mode;
/// the convergence guarantee needs 0 < p = gamma <= 1/16.
struct SolverParams {
  double eta = 0.0;
  double gamma = 0.0;
  double p = 1.0;
  Index batch = 1;
  std::int64_t max_iters = 1;
  std::optional<double> op_budget;
  std::uint64_t seed = 0;

  void validate(Index num_components) const {
    require(std::isfinite(eta) && eta > 0.0, "step size eta must be positive");
    require(gamma >= 0.0 && gamma <= 1.0, "momentum gamma must lie in [0, 1]");
    require(p > 0.0 && p <= 1.0, "probability p must lie in (0, 1]");
    require(batch >= 1 && batch <= num_components, "batch size must lie in [1, M]");
    require(max_iters >= 0, "max_iters must be nonnegative");
    require(!op_budget || *op_budget >= 0.0, "op_budget must be nonnegative");
  }

  /// Inside the hypothesis of the convergence theorem.
  bool theorem_mode() const { return gamma == p && p > 0.0 && p <= 1.0 / 16.0; }
};

inline constexpr double kMaxTheoremGamma = 1.0 / 16.0;

/// Result of the step-size rule, with the diagnostics it produced.
struct TunedParams {
  SolverParams params;
  /// p = b/M exceeded 1/16 and was clamped.
  bool clamped = false;
  /// b > L_bar sqrt(M) / L: the b L / eps term dominates the oracle cost.
  bool large_batch_warning = false;
};

namespace detail {

inline TunedParams tune_impl(double L, double L_bar, Index b, double gamma, Index M) {
  TunedParams out;
  out.params.gamma = gamma;
  out.params.p = gamma;
  out.params.batch = b;
  out.params.eta = std::min(std::sqrt(gamma * static_cast<double>(b)) / (8.0 * L_bar), 1.0 / (8.0 * L));
  out.large_batch_warning = static_cast<double>(b) > L_bar * std::sqrt(static_cast<double>(M)) / L;
  return out;
}

inline void check_constants(double L, double L_bar, Index b, Index M) {
  if (!(std::isfinite(L) && L > 0.0) || !(std::isfinite(L_bar) && L_bar > 0.0))
    throw InvalidArgument("tune_params: Lipschitz constants must be positive and finite");
  if (M < 1 || b < 1 || b > M) throw InvalidArgument("tune_params: batch size must satisfy 1 <= b <= M");
}

}  // namespace detail

/// p = gamma, eta = min(sqrt(gamma b) / (8 L_bar), 1 / (8 L)).
inline TunedParams tune_params(double L, double L_bar, Index b, double gamma, Index M) {
  detail::check_constants(L, L_bar, b, M);
  if (!(gamma > 0.0 && gamma <= kMaxTheoremGamma))
    throw InvalidArgument("tune_params: gamma must lie in (0, 1/16]");
  return detail::tune_impl(L, L_bar, b, gamma, M);
}

/// Oracle-optimal variant: p = gamma = min(b/M, 1/16).
inline TunedParams tune_params_oracle_optimal(double L, double L_bar, Index b, Index M) {
  detail::check_constants(L, L_bar, b, M);
  const double ratio = static_cast<double>(b) / static_cast<double>(M);
  TunedParams out = detail::tune_impl(L, L_bar, b, std::min(ratio, kMaxTheoremGamma), M);
  out.clamped = ratio > kMaxTheoremGamma;
  return out;
}

// ---------------------------------------------------------------------------
// Randomized verification of the standing assumptions

struct VerificationReport {
  bool passed = true;
  /// max ||F(x) - mean_j F_j(x)|| / scale over probes.
  double worst_mean_error = 0.0;
  /// max over probes of observed ||F_j(u) - F_j(v)|| / (L_j ||u - v||).
  double worst_component_lipschitz_ratio = 0.0;
  Index worst_component = -1;
  /// max observed ||F(u) - F(v)|| / (L ||u - v||).
  double worst_full_lipschitz_ratio = 0.0;
  /// min over pairs of <F(u) - F(v), u - v>.
  double worst_monotonicity = std::numeric_limits<double>::infinity();
  bool lipschitz_data_consistent = true;
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  std::string to_string() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << '\n';
    os << "  mean consistency (relative error): " << worst_mean_error << '\n';
    os << "  component Lipschitz ratio (observed/declared): " << worst_component_lipschitz_ratio;
    if (worst_component >= 0) os << " at component " << worst_component;
    os << '\n';
    os << "  full Lipschitz ratio (observed/declared): " << worst_full_lipschitz_ratio << '\n';
    os << "  min <F(u)-F(v), u-v>: " << worst_monotonicity << '\n';
    os << "  Lipschitz data consistent: " << (lipschitz_data_consistent ? "yes" : "no") << '\n';
    for (const auto& n : notes) os << "  note: " << n << '\n';
    for (const auto& f : failures) os << "  failure: " << f << '\n';
    return os.str();
  }
};

namespace detail {

// Ratio observed/declared; zero-over-zero counts as satisfied.
inline double lipschitz_ratio(double observed_diff, double declared, double step) {
  if (step <= 0.0) return 0.0;
  const double bound = declared * step;
  if (observed_diff <= 1e-14 * step) return 0.0;
  if (bound <= 0.0) return std::numeric_limits<double>::infinity();
  return observed_diff / bound;
}

template <FiniteSumOperator P>
Vec sample_domain_point(const P& problem, Rng& rng) {
  Vec v(problem.dim());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  Vec out;
  problem.prox(1.0, v, out);
  return out;
}

template <FiniteSumOperator P>
Vec component_value(const P& problem, Index j, const Vec& z) {
  Vec out = Vec::Zero(problem.dim());
  problem.add_component(j, z, 1.0, out);
  return out;
}

}  // namespace detail

/// Probabilistic check of mean consistency, declared Lipschitz constants and
/// monotonicity on `probes` random points of dom g. Pairs are formed both at
/// random and by perturbing single coordinates (then mapping back into dom g
/// through the prox), which exposes constants of axis-aligned components.
template <FiniteSumOperator P>
VerificationReport verify_problem(const P& problem, int probes, std::uint64_t rng_seed) {
  require(probes >= 1, "verify_problem: probes must be >= 1");
  constexpr double kMeanTol = 1e-10;
  constexpr double kLipschitzSlack = 1e-8;
  constexpr double kMonotoneTol = 1e-10;

  VerificationReport report;
  Rng rng(rng_seed);
  const Index dim = problem.dim();
  const Index M = problem.num_components();
  const LipschitzData& lip = problem.lipschitz();

  report.lipschitz_data_consistent = lip.consistent();
  if (!report.lipschitz_data_consistent)
    report.failures.push_back("declared L_bar does not match mean of L_m^2, or L > L_bar");
  if (lip.L == 0.0 && lip.L_bar == 0.0) report.notes.push_back("all declared Lipschitz constants are 0");

  Vec fu, fv;
  int monotone_violations = 0;
  auto check_pair = [&](const Vec& u, const Vec& v) {
    const double step = (u - v).norm();
    // Pairs the prox mapped back onto (almost) the same point carry only roundoff.
    if (step <= 1e-10 * std::max(1.0, u.norm())) return;
    problem.eval_full(u, fu);
    problem.eval_full(v, fv);
    const Vec diff = fu - fv;
    const double inner = diff.dot(u - v);
    report.worst_monotonicity = std::min(report.worst_monotonicity, inner);
    const double scale = std::max(1.0, diff.norm() * step);
    if (inner < -kMonotoneTol * scale) ++monotone_violations;
    const double full_ratio = detail::lipschitz_ratio(diff.norm(), lip.L, step);
    report.worst_full_lipschitz_ratio = std::max(report.worst_full_lipschitz_ratio, full_ratio);
    for (Index j = 0; j < M; ++j) {
      const Vec dj = detail::component_value(problem, j, u) - detail::component_value(problem, j, v);
      const double ratio = detail::lipschitz_ratio(dj.norm(), lip.per_component[j], step);
      if (ratio > report.worst_component_lipschitz_ratio) {
        report.worst_component_lipschitz_ratio = ratio;
        report.worst_component = j;
      }
    }
  };

  for (int probe = 0; probe < probes; ++probe) {
    const Vec u = detail::sample_domain_point(problem, rng);

    Vec mean = Vec::Zero(dim);
    double component_scale = 0.0;
    for (Index j = 0; j < M; ++j) {
      const Vec fj = detail::component_value(problem, j, u);
      mean += fj;
      component_scale += fj.norm();
    }
    mean /= static_cast<double>(M);
    component_scale /= static_cast<double>(M);
    problem.eval_full(u, fu);
    const double scale = std::max({fu.norm(), component_scale, std::numeric_limits<double>::min()});
    const double err = (fu - mean).norm() / scale;
    report.worst_mean_error = std::max(report.worst_mean_error, err);

    check_pair(u, detail::sample_domain_point(problem, rng));

    const double t = 0.25;
    for (Index i = 0; i < dim; ++i) {
      Vec shifted = u;
      shifted[i] += t;
      Vec v;
      problem.prox(1.0, shifted, v);
      check_pair(u, v);
    }
  }

  if (report.worst_mean_error > kMeanTol) {
    std::ostringstream os;
    os << "full operator differs from mean of components (relative error " << report.worst_mean_error
       << ")";
    report.failures.push_back(os.str());
  }
  if (monotone_violations > 0) {
    std::ostringstream os;
    os << "monotonicity violated on " << monotone_violations
       << " pairs, worst <F(u)-F(v), u-v> = " << report.worst_monotonicity;
    report.failures.push_back(os.str());
  }
  if (report.worst_component_lipschitz_ratio > 1.0 + kLipschitzSlack) {
    std::ostringstream os;
    os << "component " << report.worst_component << " exceeds its declared Lipschitz constant by factor "
       << report.worst_component_lipschitz_ratio;
    report.failures.push_back(os.str());
  }
  if (report.worst_full_lipschitz_ratio > 1.0 + kLipschitzSlack) {
    std::ostringstream os;
    os << "full operator exceeds declared L by factor " << report.worst_full_lipschitz_ratio;
    report.failures.push_back(os.str());
  }
  report.passed = report.failures.empty();
  return report;
}

}  // namespace vibench
