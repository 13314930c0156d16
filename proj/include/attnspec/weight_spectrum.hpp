#pragma once

#include <cstdint>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "attnspec/error.hpp"
#include "attnspec/logit_field.hpp"
#include "attnspec/matrix.hpp"

namespace attnspec {

/// One head's query and key projection slices, each d_h x d_model. For
/// grouped-query models the key slice is the one of the head's KV group.
struct WeightPair {
  Matrix query_weight;
  Matrix key_weight;
  std::int64_t layer = 0;
  std::int64_t query_head = 0;
  std::int64_t kv_head = 0;

  Index head_dim() const { return query_weight.rows(); }
  Index model_dim() const { return query_weight.cols(); }
};

inline void validate(const WeightPair& pair) {
  require(pair.query_weight.rows() == pair.key_weight.rows() &&
              pair.query_weight.cols() == pair.key_weight.cols(),
          ErrorKind::shape_mismatch, "W_Q and W_K slices must share a shape");
  require(pair.head_dim() > 0 && pair.head_dim() < pair.model_dim(), ErrorKind::shape_mismatch,
          "weight slices must be d_h x d_model with d_h < d_model");
}

namespace detail {

// R factor of the thin QR of Wᵀ (d_model x d_h).
inline Matrix thin_r_factor(const Matrix& weight) {
  const Index h = weight.rows();
  Eigen::HouseholderQR<Matrix> qr(weight.transpose());
  return qr.matrixQR().topRows(h).triangularView<Eigen::Upper>();
}

}  // namespace detail

/// Singular values of M = W_Qᵀ W_K without forming the d_model x d_model
/// product. With W_Qᵀ = Q₁R₁ and W_Kᵀ = Q₂R₂ we get M = Q₁ (R₁R₂ᵀ) Q₂ᵀ, so the
/// spectrum of M is that of the d_h x d_h core R₁R₂ᵀ. Exactly d_h values.
inline Spectrum interaction_singular_values(const WeightPair& pair) {
  validate(pair);
  const Matrix core = detail::thin_r_factor(pair.query_weight) * detail::thin_r_factor(pair.key_weight).transpose();
  Eigen::JacobiSVD<Matrix> svd(core);
  require(svd.info() == Eigen::Success, ErrorKind::numerical, "SVD of the interaction core did not converge");
  return spectrum_from_values(svd.singularValues());
}

inline constexpr Index kMaterializeLimit = 1024;

/// Every singular value of the explicitly formed M (d_model of them).
inline Vector materialized_interaction_values(const WeightPair& pair) {
  validate(pair);
  require(pair.model_dim() <= kMaterializeLimit, ErrorKind::precondition,
          "d_model too large to materialize W_Qᵀ W_K");
  const Matrix interaction = pair.query_weight.transpose() * pair.key_weight;
  Eigen::BDCSVD<Matrix> svd(interaction);
  require(svd.info() == Eigen::Success, ErrorKind::numerical, "SVD of W_Qᵀ W_K did not converge");
  return svd.singularValues();
}

/// Brute-force reference for interaction_singular_values: materializes M and
/// keeps the leading d_h values. Only meant for moderate d_model.
inline Spectrum full_interaction_svd(const WeightPair& pair) {
  const Vector all = materialized_interaction_values(pair);
  Spectrum s;
  s.singular_values = all.head(pair.head_dim());
  s.numerical_rank = numerical_rank(all);
  return s;
}

}  // namespace attnspec
