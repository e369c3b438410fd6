#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace vibench {

using Vec = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Text input (matrix file, trace, config) could not be parsed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
      : Error(line == 0 ? what
                        : what + " (line " + std::to_string(line) + ", column " +
                              std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant (cache coherence and the like) did not hold.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Iterates left the finite range. Carries the last finite iterate.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t iteration, Vec last_finite)
      : Error(what), iteration_(iteration), last_finite_(std::move(last_finite)) {}

  std::int64_t iteration() const noexcept { return iteration_; }
  const Vec& last_finite() const noexcept { return last_finite_; }

 private:
  std::int64_t iteration_;
  Vec last_finite_;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace vibench
