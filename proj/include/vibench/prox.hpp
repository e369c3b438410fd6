#pragma once

#include "vibench/common.hpp"
#include "vibench/vi_core.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace vibench {

/// The unit simplex {v >= 0, sum v = 1} in R^d.
struct SimplexDomain {
  Index dim = 1;

  static constexpr double kCoordinateTol = 1e-12;
  static constexpr double kSumTol = 1e-10;

  bool contains(const Vec& v) const {
    if (v.size() != dim || !v.allFinite()) return false;
    return v.minCoeff() >= -kCoordinateTol && std::abs(v.sum() - 1.0) <= kSumTol;
  }

  /// Barycenter (1/d, ..., 1/d).
  Vec center() const { return Vec::Constant(dim, 1.0 / static_cast<double>(dim)); }
};

/// Euclidean projection onto the unit simplex.
///
/// Condat's linear-expected-time scan. The running threshold
/// tau = (sum - 1) / count is kept as the pair (sum, count) over a candidate
/// list stored in one scratch buffer, so membership tests multiply instead of
/// dividing. Values parked in front of the list are revisited once, then
/// candidates at or below tau are filtered out until the list is stable.
/// The final tau is recomputed in one pass from the surviving set so that the
/// result does not carry the rounding of the running updates.
inline Vec project_simplex(const Vec& v) {
  const Index n = v.size();
  require(n >= 1, "project_simplex: empty vector");
  if (!v.allFinite()) throw InvalidArgument("project_simplex: non-finite input");

  thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(n));
  double* const base = scratch.data();

  // x > tau  <=>  x * count > sum - 1 (count > 0).
  // base[0, parked) are parked values, base[parked, end) the candidates.
  Index end = 1;
  Index parked = 0;
  base[0] = v[0];
  double sum = v[0];
  double count = 1.0;
  for (Index i = 1; i < n; ++i) {
    const double x = v[i];
    if (x * count <= sum - 1.0) continue;
    base[end] = x;
    sum += x;
    count += 1.0;
    if (sum - 1.0 <= (x - 1.0) * count) {
      sum = x;
      count = 1.0;
      parked = end;
    }
    ++end;
  }

  double* cand = base + parked;
  Index size = end - parked;
  for (Index i = parked - 1; i >= 0; --i) {
    const double x = base[i];
    if (x * count > sum - 1.0) {
      *(--cand) = x;
      ++size;
      sum += x;
      count += 1.0;
    }
  }

  for (;;) {
    const Index before = size;
    size = 0;
    for (Index i = 0; i < before; ++i) {
      const double x = cand[i];
      if (x * count > sum - 1.0) {
        cand[size++] = x;
      } else {
        sum -= x;
        count -= 1.0;
      }
    }
    if (size == before) break;
  }

  sum = 0.0;
  for (Index i = 0; i < size; ++i) sum += cand[i];
  const double tau = (sum - 1.0) / static_cast<double>(size);

  Vec out(n);
  for (Index i = 0; i < n; ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

/// Indicator of the simplex as a prox-friendly function.
inline ProxFriendlyFunction simplex_indicator(Index dim) {
  const SimplexDomain domain{dim};
  ProxFriendlyFunction g;
  g.prox_map = [dim](double, const Vec& x) {
    if (x.size() != dim) throw InvalidArgument("simplex prox: dimension mismatch");
    return project_simplex(x);
  };
  g.value = [domain](const Vec& x) {
    return domain.contains(x) ? 0.0 : std::numeric_limits<double>::infinity();
  };
  g.domain_test = [domain](const Vec& x) { return domain.contains(x); };
  return g;
}

/// Prox of the indicator of a product of simplices: blockwise projection.
/// alpha does not enter (indicators are invariant under scaling).
inline Vec prox_indicator_product(std::span<const SimplexDomain> domains, double alpha, const Vec& x) {
  require(alpha > 0.0, "prox_indicator_product: alpha must be positive");
  Index total = 0;
  for (const auto& d : domains) total += d.dim;
  if (total != x.size())
    throw InvalidArgument("prox_indicator_product: point of dimension " + std::to_string(x.size()) +
                          " does not partition into blocks totalling " + std::to_string(total));
  Vec out(x.size());
  Index offset = 0;
  for (const auto& d : domains) {
    out.segment(offset, d.dim) = project_simplex(x.segment(offset, d.dim));
    offset += d.dim;
  }
  return out;
}

/// prox of g = 0 is the identity.
inline Vec prox_zero(double /*alpha*/, const Vec& x) { return x; }

/// Natural residual ||x - prox_{eta g}(x - eta F(x))||; zero exactly at
/// solutions of the VI.
template <FiniteSumOperator P>
double prox_residual(const P& problem, const Vec& x, double eta) {
  require(eta > 0.0, "prox_residual: eta must be positive");
  Vec fx;
  problem.eval_full(x, fx);
  Vec y;
  problem.prox(eta, Vec(x - eta * fx), y);
  return (x - y).norm();
}

}  // namespace vibench
