#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <stdexcept>
#include <string>

namespace bmvc {

// Dense 64-bit real matrix, row-major storage. The universal numeric carrier
// for features, latents, graphs and gradients.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Incompatibly shaped operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A computation produced NaN or Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerically rank-deficient input to the thin-QR factorization. `column`
// is the first offending column.
struct RankError : std::runtime_error {
  int column;
  RankError(const std::string& msg, int col) : std::runtime_error(msg), column(col) {}
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void check_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) {
    throw NumericError(std::string(where) + ": non-finite value in " + shape_str(m) + " result");
  }
}

// Shortest exact decimal rendering used by all text outputs (17 significant
// digits round-trip a double).
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace bmvc
