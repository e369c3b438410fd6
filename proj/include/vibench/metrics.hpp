#pragma once

#include "vibench/common.hpp"
#include "vibench/problems.hpp"
#include "vibench/prox.hpp"
#include "vibench/trace.hpp"
#include "vibench/vi_core.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace vibench {

/// Oracle bookkeeping in component units. One full operator evaluation is
/// M components, so matvec_ops = component_evals / M; for matrix games one
/// matvec op is one (A y, A^T x) pair.
struct OpAccount {
  Index num_components = 1;
  std::int64_t component_evals = 0;
  std::int64_t full_evals = 0;

  void charge_components(std::int64_t n) { component_evals += n; }
  void charge_full() {
    component_evals += num_components;
    ++full_evals;
  }
  double matvec_ops() const {
    return static_cast<double>(component_evals) / static_cast<double>(num_components);
  }
};

namespace detail {

inline constexpr double kFeasibilityTol = 1e-8;

// Silent re-projection of slightly infeasible points; rejects anything
// further than kFeasibilityTol from the simplex product.
inline Vec feasible_game_point(const MatrixGame& game, const Vec& z) {
  if (z.size() != game.dim())
    throw InvalidArgument("duality gap: point has dimension " + std::to_string(z.size()) + ", expected " +
                          std::to_string(game.dim()));
  if (!z.allFinite()) throw InvalidArgument("duality gap: non-finite point");
  if (game.in_domain(z)) return z;
  const Index d = game.size();
  for (const auto& block : {z.head(d), z.tail(d)}) {
    if (block.minCoeff() < -kFeasibilityTol || std::abs(block.sum() - 1.0) > kFeasibilityTol)
      throw InvalidArgument("duality gap: point is not in the simplex product (tolerance 1e-8)");
  }
  Vec out;
  game.prox(1.0, z, out);
  return out;
}

}  // namespace detail

/// max_i (A^T x)_i - min_j (A y)_j: the sup of the gap function over the
/// whole simplex product, attained at vertices.
inline double game_duality_gap(const MatrixGame& game, const Vec& z) {
  const Vec p = detail::feasible_game_point(game, z);
  const Index d = game.size();
  const Vec aty = game.matrix().transpose() * p.head(d);
  const Vec ay = game.matrix() * p.tail(d);
  return aty.maxCoeff() - ay.minCoeff();
}

/// The bracket <F(u), z - u> + g(z) - g(u) whose sup over C is the gap.
template <FiniteSumOperator P>
double gap_functional(const P& problem, const Vec& z, const Vec& u) {
  Vec fu;
  problem.eval_full(u, fu);
  return fu.dot(z - u) + problem.g_value(z) - problem.g_value(u);
}

struct GapWitness {
  Vec comparator;
  double bound = 0.0;
};

/// Comparator u* = (e_{argmin (A y)}, e_{argmax (A^T x)}) attaining the
/// gap sup, with the bracket evaluated through the operator at u*.
inline GapWitness gap_lower_witness(const MatrixGame& game, const Vec& z) {
  const Vec p = detail::feasible_game_point(game, z);
  const Index d = game.size();
  const Vec aty = game.matrix().transpose() * p.head(d);
  const Vec ay = game.matrix() * p.tail(d);
  Index i_max = 0;
  Index j_min = 0;
  aty.maxCoeff(&i_max);
  ay.minCoeff(&j_min);
  GapWitness w{Vec::Zero(game.dim()), 0.0};
  w.comparator[j_min] = 1.0;
  w.comparator[d + i_max] = 1.0;
  w.bound = gap_functional(game, p, w.comparator);
  return w;
}

template <FiniteSumOperator P>
double residual_metric(const P& problem, const Vec& z, double eta) {
  return prox_residual(problem, z, eta);
}

/// Least-squares slope of log(gap_avg) against log(iter) over rows with
/// k_lo <= iter <= k_hi and positive gap. Needs at least 10 such rows.
inline double slope_estimate(const std::vector<TraceRow>& rows, std::int64_t k_lo, std::int64_t k_hi) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.iter < k_lo || r.iter > k_hi || r.iter <= 0) continue;
    if (!(r.gap_avg > 0.0) || !std::isfinite(r.gap_avg)) continue;
    const double x = std::log(static_cast<double>(r.iter));
    const double y = std::log(r.gap_avg);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 10)
    throw InvalidArgument("slope_estimate: need at least 10 rows with positive gap in window, found " +
                          std::to_string(n));
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) throw InvalidArgument("slope_estimate: window spans a single iteration");
  return (n * sxy - sx * sy) / denom;
}

inline double slope_estimate(const RunTrace& trace, std::int64_t k_lo, std::int64_t k_hi) {
  return slope_estimate(trace.rows, k_lo, k_hi);
}

}  // namespace vibench
