#pragma once

// Reference implementations used only by the tests. They are deliberately
// naive (loops, sorting, exhaustive enumeration) and share no code with the
// library paths they check.

#include "vibench/common.hpp"
#include "vibench/vi_core.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using vibench::Index;
using vibench::Matrix;
using vibench::Vec;

/// Sort-and-threshold projection onto the unit simplex.
inline Vec project_simplex_sort(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) tau = t;
  }
  Vec out(v.size());
  for (Index i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

inline Vec dense_multiply(const Matrix& A, const Vec& x) {
  Vec out = Vec::Zero(A.rows());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) out[i] += A(i, j) * x[j];
  return out;
}

inline Vec dense_multiply_transposed(const Matrix& A, const Vec& x) {
  Vec out = Vec::Zero(A.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) out[j] += A(i, j) * x[i];
  return out;
}

/// (A y, -A^T x) for z = (x, y).
inline Vec game_operator(const Matrix& A, const Vec& z) {
  const Index d = A.rows();
  Vec out(2 * d);
  out.head(d) = dense_multiply(A, z.tail(d));
  out.tail(d) = -dense_multiply_transposed(A, z.head(d));
  return out;
}

/// sup over all vertex pairs u = (e_a, e_b) of <F(u), z - u>, evaluated
/// through the operator itself.
inline double vertex_scan_gap(const Matrix& A, const Vec& z) {
  const Index d = A.rows();
  double best = -INFINITY;
  for (Index a = 0; a < d; ++a) {
    for (Index b = 0; b < d; ++b) {
      Vec u = Vec::Zero(2 * d);
      u[a] = 1.0;
      u[d + b] = 1.0;
      best = std::max(best, game_operator(A, u).dot(z - u));
    }
  }
  return best;
}

/// All ordered b-tuples over {0..M-1}.
inline std::vector<std::vector<Index>> enumerate_batches(Index M, Index b) {
  std::vector<std::vector<Index>> out;
  std::vector<Index> cur(static_cast<std::size_t>(b), 0);
  for (;;) {
    out.push_back(cur);
    Index pos = b - 1;
    while (pos >= 0 && ++cur[static_cast<std::size_t>(pos)] == M) cur[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return out;
}

inline double spectral_norm_svd(const Eigen::MatrixXd& B) {
  if (B.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B);
  return svd.singularValues()(0);
}

inline Vec gaussian_vector(Index n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = nd(gen);
  return v;
}

inline Matrix gaussian_matrix(Index r, Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Matrix A(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) A(i, j) = nd(gen);
  return A;
}

/// A point of the simplex product with d coordinates per block.
inline Vec random_game_point(Index d, std::mt19937_64& gen) {
  std::exponential_distribution<double> ex(1.0);
  Vec z(2 * d);
  for (Index i = 0; i < 2 * d; ++i) z[i] = ex(gen);
  z.head(d) /= z.head(d).sum();
  z.tail(d) /= z.tail(d).sum();
  return z;
}

/// Linear finite-sum problem F_j(x) = B_j x + c_j with g = 0; constants
/// from an SVD of each B_j and of their mean.
struct LinearFiniteSum {
  std::vector<Eigen::MatrixXd> B;
  std::vector<Vec> c;
  vibench::FiniteSumProblem problem;
};

inline LinearFiniteSum random_linear_problem(Index dim, Index M, std::mt19937_64& gen) {
  std::vector<Eigen::MatrixXd> B;
  std::vector<Vec> c;
  std::vector<double> Lj;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(dim, dim);
  for (Index j = 0; j < M; ++j) {
    Eigen::MatrixXd Bj = Eigen::MatrixXd(gaussian_matrix(dim, dim, gen));
    B.push_back(Bj);
    c.push_back(gaussian_vector(dim, gen));
    Lj.push_back(spectral_norm_svd(Bj));
    mean += Bj;
  }
  mean /= static_cast<double>(M);
  const double L = spectral_norm_svd(mean);
  double sq = 0.0;
  for (double l : Lj) sq += l * l;
  vibench::LipschitzData lip{L, Lj, std::sqrt(sq / static_cast<double>(M))};
  auto comp = [B, c](Index j, const Vec& x) -> Vec {
    return B[static_cast<std::size_t>(j)] * x + c[static_cast<std::size_t>(j)];
  };
  vibench::FiniteSumProblem p(dim, M, comp, {}, vibench::ProxFriendlyFunction::zero(), lip);
  return {B, c, p};
}

}  // namespace oracle
