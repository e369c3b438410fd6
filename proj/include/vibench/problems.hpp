#pragma once

#include "vibench/common.hpp"
#include "vibench/prox.hpp"
#include "vibench/random.hpp"
#include "vibench/vi_core.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace vibench {

// ---------------------------------------------------------------------------
// Spectral norm

/// Power iteration failed to settle; carries the best estimate of sigma_max.
class PowerIterationError : public Error {
 public:
  PowerIterationError(const std::string& what, double estimate) : Error(what), estimate_(estimate) {}
  double estimate() const noexcept { return estimate_; }

 private:
  double estimate_;
};

struct PowerIterationOptions {
  double tolerance = 1e-8;
  int max_iters = 10000;
  std::uint64_t seed = 0x5eed5eedULL;
};

/// sigma_max(A) by power iteration on A^T A from a seeded Gaussian start.
/// Stops when the Rayleigh quotient changes by at most tolerance (relative).
inline double spectral_norm(const Matrix& A, const PowerIterationOptions& options = {}) {
  if (!A.allFinite()) throw InvalidArgument("spectral_norm: matrix has non-finite entries");
  if (A.size() == 0 || A.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Rng rng(options.seed);
  Vec v(A.cols());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < options.max_iters; ++it) {
    const Vec av = A * v;
    const double next = av.squaredNorm();
    Vec w = A.transpose() * av;
    const double wn = w.norm();
    if (wn == 0.0) return std::sqrt(next);
    v = w / wn;
    if (it > 0 && std::abs(next - lambda) <= options.tolerance * next) return std::sqrt(next);
    lambda = next;
  }
  throw PowerIterationError("power iteration did not converge in " + std::to_string(options.max_iters) +
                                " iterations",
                            std::sqrt(lambda));
}

// ---------------------------------------------------------------------------
// Matrix games

/// Bilinear game min_{x in simplex} max_{y in simplex} x^T A y, written as a
/// finite-sum VI on z = (x, y) with F(z) = (A y, -A^T x) and d paired
/// column/row summands
///
///   F_j(x, y) = d * (A_{:j} y_j, -x_j A_{j:}^T),   (1/d) sum_j F_j = F.
///
/// One full evaluation is one matvec pair; one component is 1/d of that.
class MatrixGame {
 public:
  explicit MatrixGame(Matrix A, const PowerIterationOptions& power = {}) : A_(std::move(A)) {
    require(A_.rows() == A_.cols(), "MatrixGame: matrix must be square");
    require(A_.rows() >= 1, "MatrixGame: matrix must be non-empty");
    require(A_.allFinite(), "MatrixGame: matrix has non-finite entries");
    At_ = A_.transpose();
    col_norms_ = A_.colwise().norm().transpose();
    row_norms_ = A_.rowwise().norm();
    lipschitz_ = compute_lipschitz(power);
  }

  /// Game with externally supplied constants (skips power iteration).
  MatrixGame(Matrix A, LipschitzData lipschitz) : A_(std::move(A)) {
    require(A_.rows() == A_.cols() && A_.rows() >= 1, "MatrixGame: matrix must be square and non-empty");
    require(A_.allFinite(), "MatrixGame: matrix has non-finite entries");
    require(static_cast<Index>(lipschitz.per_component.size()) == A_.rows(),
            "MatrixGame: one Lipschitz constant per component required");
    At_ = A_.transpose();
    col_norms_ = A_.colwise().norm().transpose();
    row_norms_ = A_.rowwise().norm();
    lipschitz_ = std::move(lipschitz);
  }

  /// Side length d of A.
  Index size() const { return A_.rows(); }
  Index dim() const { return 2 * A_.rows(); }
  Index num_components() const { return A_.rows(); }
  const Matrix& matrix() const { return A_; }
  const Vec& column_norms() const { return col_norms_; }
  const Vec& row_norms() const { return row_norms_; }
  const LipschitzData& lipschitz() const { return lipschitz_; }

  void eval_full(const Vec& z, Vec& out) const {
    check_point(z);
    const Index d = size();
    out.resize(2 * d);
    out.head(d).noalias() = A_ * z.tail(d);
    out.tail(d).noalias() = -(At_ * z.head(d));
  }

  Vec full(const Vec& z) const {
    Vec out;
    eval_full(z, out);
    return out;
  }

  void add_component(Index j, const Vec& z, double scale, Vec& out) const {
    check_index(j);
    check_point(z);
    const Index d = size();
    const double dd = static_cast<double>(d);
    const double yj = z[d + j];
    const double xj = z[j];
    // Column j of A and of A^T are contiguous in column-major storage.
    if (yj != 0.0) out.head(d) += (scale * dd * yj) * A_.col(j);
    if (xj != 0.0) out.tail(d) -= (scale * dd * xj) * At_.col(j);
  }

  Vec component(Index j, const Vec& z) const {
    Vec out = Vec::Zero(dim());
    add_component(j, z, 1.0, out);
    return out;
  }

  void prox(double alpha, const Vec& x, Vec& out) const {
    const std::array<SimplexDomain, 2> blocks{SimplexDomain{size()}, SimplexDomain{size()}};
    out = prox_indicator_product(blocks, alpha, x);
  }

  double g_value(const Vec& z) const {
    return in_domain(z) ? 0.0 : std::numeric_limits<double>::infinity();
  }

  bool in_domain(const Vec& z) const {
    if (z.size() != dim()) return false;
    const SimplexDomain s{size()};
    return s.contains(z.head(size())) && s.contains(z.tail(size()));
  }

  /// (center, center): the barycentric starting point.
  Vec center() const { return Vec::Constant(dim(), 1.0 / static_cast<double>(size())); }

  /// 64-bit FNV-1a over the row-major bytes of A.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(A_.data());
    const std::size_t n = static_cast<std::size_t>(A_.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  LipschitzData compute_lipschitz(const PowerIterationOptions& power) const {
    const Index d = size();
    std::vector<double> per(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j)
      per[static_cast<std::size_t>(j)] = static_cast<double>(d) * std::max(col_norms_[j], row_norms_[j]);
    return LipschitzData::from_components(spectral_norm(A_, power), std::move(per));
  }

  void check_index(Index j) const {
    if (j < 0 || j >= size())
      throw InvalidArgument("game component index " + std::to_string(j) + " out of range [0, " +
                            std::to_string(size()) + ")");
  }
  void check_point(const Vec& z) const {
    if (z.size() != dim())
      throw InvalidArgument("game point has dimension " + std::to_string(z.size()) + ", expected " +
                            std::to_string(dim()));
  }

  Matrix A_;
  Matrix At_;  // A^T, row-major, so columns of A are contiguous
  Vec col_norms_;
  Vec row_norms_;
  LipschitzData lipschitz_;
};

static_assert(FiniteSumOperator<MatrixGame>);

/// F = (A y, -A^T x) of a square matrix.
inline Vec game_operator_full(const MatrixGame& game, const Vec& z) { return game.full(z); }

/// F_j for 0-based j.
inline Vec game_operator_component(const MatrixGame& game, Index j, const Vec& z) {
  return game.component(j, z);
}

/// L_j = d max(||A_{:j}||, ||A_{j:}||), L_bar from the quadratic mean and
/// L = sigma_max(A).
inline LipschitzData component_lipschitz(const Matrix& A, const PowerIterationOptions& power = {}) {
  return MatrixGame(A, power).lipschitz();
}

/// Type-erased view of a game (shares nothing mutable with it).
inline FiniteSumProblem as_finite_sum(const MatrixGame& game) {
  auto shared = std::make_shared<const MatrixGame>(game);
  const Index d = game.size();
  ProxFriendlyFunction g = ProxFriendlyFunction::product(simplex_indicator(d), d, simplex_indicator(d), d);
  return FiniteSumProblem(
      game.dim(), game.num_components(), [shared](Index j, const Vec& z) { return shared->component(j, z); },
      [shared](const Vec& z) { return shared->full(z); }, std::move(g), game.lipschitz());
}

// ---------------------------------------------------------------------------
// Generators

enum class GeneratorKind { policeman_burglar, uniform_grid, seeded_gaussian };

inline std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::policeman_burglar: return "policeman_burglar";
    case GeneratorKind::uniform_grid: return "uniform_grid";
    case GeneratorKind::seeded_gaussian: return "seeded_gaussian";
  }
  return "unknown";
}

/// Accepts both underscore and dash spellings.
inline GeneratorKind parse_generator_kind(std::string name) {
  for (auto& c : name)
    if (c == '-') c = '_';
  if (name == "policeman_burglar") return GeneratorKind::policeman_burglar;
  if (name == "uniform_grid") return GeneratorKind::uniform_grid;
  if (name == "seeded_gaussian") return GeneratorKind::seeded_gaussian;
  throw InvalidArgument("unknown generator kind '" + name +
                        "' (expected policeman_burglar, uniform_grid or seeded_gaussian)");
}

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::policeman_burglar;
  Index dim = 2;
  std::uint64_t seed = 0;
  double theta = 0.8;

  bool operator==(const GeneratorSpec&) const = default;
};

/// policeman_burglar: A_ij = w_i (1 - exp(-theta |i - j|)), w_i = |z_i| with
///   z_1..z_d standard normals drawn in order from Rng(seed).
/// uniform_grid: A_ij = (i + j - 1) / (2d - 1), 1-based, seed ignored.
/// seeded_gaussian: i.i.d. standard normals, row-major order, from Rng(seed).
inline Matrix generate_matrix(const GeneratorSpec& spec) {
  if (spec.dim < 2) throw InvalidArgument("generate_matrix: dimension must be >= 2");
  const Index d = spec.dim;
  Matrix A(d, d);
  Rng rng(spec.seed);
  switch (spec.kind) {
    case GeneratorKind::policeman_burglar: {
      if (!(std::isfinite(spec.theta) && spec.theta > 0.0))
        throw InvalidArgument("generate_matrix: theta must be positive");
      Vec w(d);
      for (Index i = 0; i < d; ++i) w[i] = std::abs(rng.normal());
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
          A(i, j) = w[i] * (1.0 - std::exp(-spec.theta * static_cast<double>(std::abs(i - j))));
      break;
    }
    case GeneratorKind::uniform_grid: {
      const double denom = static_cast<double>(2 * d - 1);
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) A(i, j) = static_cast<double>(i + j + 1) / denom;
      break;
    }
    case GeneratorKind::seeded_gaussian: {
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) A(i, j) = rng.normal();
      break;
    }
  }
  return A;
}

// ---------------------------------------------------------------------------
// Matrix text format
//
//   # optional comment lines
//   d d
//   a_11 a_12 ... a_1d
//   ...
//
// Values are written with 17 significant digits so that a save/load cycle
// reproduces every double exactly.

inline void write_matrix(std::ostream& os, const Matrix& A) {
  require(A.rows() == A.cols(), "save_matrix: matrix must be square");
  os << A.rows() << ' ' << A.cols() << '\n';
  char buf[64];
  for (Index i = 0; i < A.rows(); ++i) {
    for (Index j = 0; j < A.cols(); ++j) {
      auto res = std::to_chars(buf, buf + sizeof buf, A(i, j), std::chars_format::general, 17);
      if (j > 0) os << ' ';
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
}

inline void save_matrix(const Matrix& A, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_matrix(out, A);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace detail {

struct Token {
  std::string_view text;
  std::size_t column;
};

inline std::vector<Token> split_spaces(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline bool is_comment_or_blank(std::string_view line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

inline double parse_finite(const Token& tok, std::size_t line_no) {
  double value = 0.0;
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw ParseError("invalid number '" + std::string(tok.text) + "'", line_no, tok.column);
  if (!std::isfinite(value))
    throw ParseError("non-finite value '" + std::string(tok.text) + "'", line_no, tok.column);
  return value;
}

}  // namespace detail

inline Matrix read_matrix(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<Index> d;
  Matrix A;
  Index row = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_comment_or_blank(line)) continue;
    const auto tokens = detail::split_spaces(line);
    if (!d) {
      if (tokens.size() != 2) throw ParseError("header must be 'd d'", line_no, 1);
      const double r = detail::parse_finite(tokens[0], line_no);
      const double c = detail::parse_finite(tokens[1], line_no);
      if (r != c || r < 1 || r != std::floor(r))
        throw ParseError("header must declare a square positive size 'd d'", line_no, 1);
      d = static_cast<Index>(r);
      A.resize(*d, *d);
      continue;
    }
    if (row >= *d) throw ParseError("more rows than declared (" + std::to_string(*d) + ")", line_no, 1);
    if (static_cast<Index>(tokens.size()) != *d)
      throw ParseError("row has " + std::to_string(tokens.size()) + " values, expected " + std::to_string(*d),
                       line_no, tokens.empty() ? 1 : tokens.back().column);
    for (Index j = 0; j < *d; ++j) A(row, j) = detail::parse_finite(tokens[static_cast<std::size_t>(j)], line_no);
    ++row;
  }
  if (!d) throw ParseError("missing 'd d' header");
  if (row != *d)
    throw ParseError("header declares " + std::to_string(*d) + " rows but " + std::to_string(row) +
                         " present",
                     line_no + 1, 1);
  return A;
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return read_matrix(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Closed-form 2x2 equilibria (test ground truth)

struct SmallGameSolution {
  Vec x;
  Vec y;
  double value = 0.0;
};

/// Equilibrium of min_x max_y x^T A y over 2-simplices: the first pure
/// saddle (entry maximal in its row and minimal in its column) in row-major
/// order, otherwise the unique mixed equilibrium.
inline SmallGameSolution exact_small_game_solution(const Matrix& A) {
  require(A.rows() == 2 && A.cols() == 2, "exact_small_game_solution: A must be 2x2");
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) {
      const bool row_max = A(i, j) >= A(i, 1 - j);
      const bool col_min = A(i, j) <= A(1 - i, j);
      if (row_max && col_min) {
        SmallGameSolution s{Vec::Zero(2), Vec::Zero(2), A(i, j)};
        s.x[i] = 1.0;
        s.y[j] = 1.0;
        return s;
      }
    }
  }
  const double a = A(0, 0), b = A(0, 1), c = A(1, 0), e = A(1, 1);
  const double denom = a + e - b - c;
  SmallGameSolution s{Vec(2), Vec(2), (a * e - b * c) / denom};
  s.x[0] = (e - c) / denom;
  s.x[1] = 1.0 - s.x[0];
  s.y[0] = (e - b) / denom;
  s.y[1] = 1.0 - s.y[0];
  return s;
}

}  // namespace vibench
