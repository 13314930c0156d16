#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/SVD>

#include "attnspec/error.hpp"
#include "attnspec/matrix.hpp"

namespace attnspec {

/// Singular values below this fraction of the largest one do not count
/// toward the numerical rank.
inline constexpr double kRankTolerance = 1e-12;

/// σ_{d_h+2} / σ_1 must stay below this for a field built from d_h-wide factors.
inline constexpr double kRankBoundTolerance = 1e-10;

/// Descending singular values, optionally with the singular vectors as
/// columns. Used for both the logit field and the weight interaction.
struct Spectrum {
  Vector singular_values;
  std::optional<Matrix> left_vectors;
  std::optional<Matrix> right_vectors;
  Index numerical_rank = 0;

  Index size() const { return singular_values.size(); }
  bool has_vectors() const { return left_vectors.has_value() && right_vectors.has_value(); }
  double leading() const { return size() > 0 ? singular_values(0) : 0.0; }
};

inline Index numerical_rank(const Vector& sigma, double tolerance = kRankTolerance) {
  if (sigma.size() == 0 || sigma(0) <= 0.0) return 0;
  const double cutoff = tolerance * sigma(0);
  Index r = 0;
  for (Index k = 0; k < sigma.size(); ++k)
    if (sigma(k) > cutoff) ++r;
  return r;
}

/// Builds a Spectrum from values only; sorts descending and clamps tiny
/// negative round-off to zero.
inline Spectrum spectrum_from_values(Vector values) {
  for (Index k = 0; k < values.size(); ++k) {
    require(std::isfinite(values(k)), ErrorKind::non_finite, "singular value is not finite");
    values(k) = std::max(values(k), 0.0);
  }
  std::sort(values.data(), values.data() + values.size(), std::greater<>());
  Spectrum s;
  s.numerical_rank = numerical_rank(values);
  s.singular_values = std::move(values);
  return s;
}

/// Z = Q Kᵀ / sqrt(d_h), no causal mask.
inline Matrix compute_logits(const Matrix& queries, const Matrix& keys, Index head_dim) {
  require(head_dim > 0, ErrorKind::precondition, "head_dim must be positive");
  require(queries.rows() == keys.rows() && queries.cols() == keys.cols(), ErrorKind::shape_mismatch,
          "queries and keys must share a shape");
  require(queries.cols() == head_dim, ErrorKind::shape_mismatch, "queries/keys must have head_dim columns");
  return (queries * keys.transpose()) / std::sqrt(static_cast<double>(head_dim));
}

struct LogitField {
  Matrix logits;     // Z
  Matrix centered;   // Ẽ
  Vector row_means;  // Z̄_i

  Index length() const { return logits.rows(); }

  double max_abs_row_sum() const {
    return centered.size() == 0 ? 0.0 : centered.rowwise().sum().cwiseAbs().maxCoeff();
  }

  /// Allowed |Σ_j Ẽ_ij|, scaled by L and the logit magnitude.
  double row_sum_tolerance() const {
    const double scale = logits.size() == 0 ? 0.0 : logits.cwiseAbs().maxCoeff();
    return 1e-9 * static_cast<double>(length()) * scale;
  }
};

inline LogitField row_center(const Matrix& logits) {
  require(logits.rows() == logits.cols(), ErrorKind::shape_mismatch, "logit matrix must be square");
  LogitField f;
  f.logits = logits;
  f.row_means = logits.rowwise().mean();
  f.centered = logits.colwise() - f.row_means;
  return f;
}

/// Dense f64 SVD of the centered field. Callers are expected to pass a
/// row-centered matrix; the rank bound d_h + 1 relies on it.
inline Spectrum svd_field(const Matrix& centered, bool want_vectors) {
  if (centered.size() == 0) return Spectrum{};
  const unsigned options = want_vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0u;
  Eigen::BDCSVD<Matrix> svd(centered, options);
  require(svd.info() == Eigen::Success, ErrorKind::numerical,
          "SVD did not converge (Eigen info " + std::to_string(static_cast<int>(svd.info())) + ")");

  Spectrum s;
  s.singular_values = svd.singularValues();
  s.numerical_rank = numerical_rank(s.singular_values);
  if (want_vectors) {
    s.left_vectors = svd.matrixU();
    s.right_vectors = svd.matrixV();
  }
  return s;
}

}  // namespace attnspec
