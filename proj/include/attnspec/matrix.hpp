#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "attnspec/error.hpp"

namespace attnspec {

// All analysis runs in f64. Storage order inside Eigen is irrelevant to
// callers; the interchange format is row-major and converted at the edge.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Row-major flat index of the first non-finite entry, if any.
inline std::optional<std::size_t> first_non_finite(const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j))) return static_cast<std::size_t>(i * m.cols() + j);
  return std::nullopt;
}

inline Matrix from_row_major(std::span<const double> data, Index rows, Index cols) {
  require(static_cast<Index>(data.size()) == rows * cols, ErrorKind::shape_mismatch,
          "row-major buffer length does not match rows x cols");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = data[static_cast<std::size_t>(i * cols + j)];
  return m;
}

inline std::vector<double> to_row_major(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return out;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace attnspec
