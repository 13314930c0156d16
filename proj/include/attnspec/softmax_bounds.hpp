#pragma once

// Low-rank truncation of the centered logit field and the softmax stability
// bound: with β the delocalization of the tail singular vectors,
//
//   ‖softmax(Ẽ_i) − softmax((Ẽ_r)_i)‖₁ ≤ (β/√L) Σ_{k>r} σ_k,
//
// which follows from ‖softmax(a) − softmax(b)‖₁ ≤ ‖a − b‖∞.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "attnspec/error.hpp"
#include "attnspec/logit_field.hpp"
#include "attnspec/matrix.hpp"

namespace attnspec {

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - peak).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Vector softmax(std::span<const double> x) {
  Matrix row(1, static_cast<Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) row(0, static_cast<Index>(j)) = x[j];
  return softmax_rows(row).row(0).transpose();
}

/// Ẽ_r = Σ_{k≤r} σ_k u_k v_kᵀ.
inline Matrix truncate_field(const Spectrum& s, Index r) {
  require(s.has_vectors(), ErrorKind::precondition, "truncation needs singular vectors");
  require(r >= 0 && r <= s.numerical_rank, ErrorKind::precondition, "truncation rank out of range");
  const auto& u = *s.left_vectors;
  const auto& v = *s.right_vectors;
  return u.leftCols(r) * s.singular_values.head(r).asDiagonal() * v.leftCols(r).transpose();
}

struct TruncationResult {
  Index rank = 0;
  Vector l1_per_row;
  double mean_l1 = 0.0;
  double max_l1 = 0.0;
};

namespace detail {

inline TruncationResult l1_between(const Matrix& probs, const Matrix& truncated) {
  const Matrix approx = softmax_rows(truncated);
  TruncationResult res;
  res.l1_per_row = (probs - approx).cwiseAbs().rowwise().sum();
  if (res.l1_per_row.size() > 0) {
    res.mean_l1 = res.l1_per_row.mean();
    res.max_l1 = res.l1_per_row.maxCoeff();
  }
  return res;
}

}  // namespace detail

/// Per-row ℓ1 distance between the attention distributions of two logit
/// matrices.
inline TruncationResult l1_attention_error(const Matrix& centered, const Matrix& truncated) {
  require(centered.rows() == truncated.rows() && centered.cols() == truncated.cols(), ErrorKind::shape_mismatch,
          "l1_attention_error: shape mismatch");
  return detail::l1_between(softmax_rows(centered), truncated);
}

/// l1_attention_error for every rank in `ranks` (ascending, each ≤ the
/// numerical rank), building Ẽ_r incrementally.
inline std::vector<TruncationResult> truncation_sweep(const Matrix& centered, const Spectrum& s,
                                                      const std::vector<Index>& ranks) {
  require(s.has_vectors(), ErrorKind::precondition, "truncation needs singular vectors");
  require(std::is_sorted(ranks.begin(), ranks.end()), ErrorKind::precondition, "ranks must be ascending");
  const Matrix probs = softmax_rows(centered);
  const auto& u = *s.left_vectors;
  const auto& v = *s.right_vectors;

  std::vector<TruncationResult> out;
  Matrix partial = Matrix::Zero(centered.rows(), centered.cols());
  Index built = 0;
  for (Index r : ranks) {
    require(r >= 0 && r <= s.numerical_rank, ErrorKind::precondition, "truncation rank out of range");
    for (; built < r; ++built) partial.noalias() += s.singular_values(built) * u.col(built) * v.col(built).transpose();
    auto res = detail::l1_between(probs, partial);
    res.rank = r;
    out.push_back(std::move(res));
  }
  return out;
}

enum class Side { left, right };

struct VectorBeta {
  Index k = 0;  // 1-based component index
  Side side = Side::left;
  double beta = 0.0;
};

struct DelocalizationReport {
  std::vector<VectorBeta> per_vector_beta;
  double median_beta = 0.0;
  double max_beta = 0.0;
  // suffix_max[r] = max β over both sides with index k > r (k ≤ numerical rank).
  std::vector<double> suffix_max;

  double tail_beta(Index r) const {
    if (r < 0) r = 0;
    return static_cast<std::size_t>(r) < suffix_max.size() ? suffix_max[static_cast<std::size_t>(r)] : 0.0;
  }
};

/// β = √L · max_j x_j² for a unit vector x.
inline double vector_beta(const Eigen::Ref<const Vector>& x, Index length) {
  return std::sqrt(static_cast<double>(length)) * x.cwiseAbs2().maxCoeff();
}

/// β for each retained singular vector (k ≤ numerical rank), both sides.
inline DelocalizationReport delocalization_beta(const Spectrum& s, Index length) {
  require(s.has_vectors(), ErrorKind::precondition, "delocalization needs singular vectors");
  require(length > 0, ErrorKind::precondition, "length must be positive");
  const auto& u = *s.left_vectors;
  const auto& v = *s.right_vectors;
  const Index rank = s.numerical_rank;

  DelocalizationReport rep;
  std::vector<double> per_k(static_cast<std::size_t>(rank), 0.0);
  std::vector<double> all;
  for (Index k = 0; k < rank; ++k) {
    const double bl = vector_beta(u.col(k), length);
    const double br = vector_beta(v.col(k), length);
    rep.per_vector_beta.push_back({k + 1, Side::left, bl});
    rep.per_vector_beta.push_back({k + 1, Side::right, br});
    all.push_back(bl);
    all.push_back(br);
    per_k[static_cast<std::size_t>(k)] = std::max(bl, br);
  }
  if (!all.empty()) {
    std::sort(all.begin(), all.end());
    const auto n = all.size();
    rep.median_beta = n % 2 == 1 ? all[n / 2] : 0.5 * (all[n / 2 - 1] + all[n / 2]);
    rep.max_beta = all.back();
  }
  rep.suffix_max.assign(static_cast<std::size_t>(rank) + 1, 0.0);
  for (Index k = rank - 1; k >= 0; --k)
    rep.suffix_max[static_cast<std::size_t>(k)] =
        std::max(rep.suffix_max[static_cast<std::size_t>(k) + 1], per_k[static_cast<std::size_t>(k)]);
  return rep;
}

/// Σ_{k=r+1}^{R} σ_k with R the numerical rank.
inline double tail_sum(const Spectrum& s, Index r) {
  double acc = 0.0;
  for (Index k = std::max<Index>(r, 0); k < s.numerical_rank; ++k) acc += s.singular_values(k);
  return acc;
}

inline double truncation_bound(double tail_beta, const Spectrum& s, Index r, Index length) {
  require(r >= 0 && r <= s.numerical_rank, ErrorKind::precondition, "bound rank exceeds numerical rank");
  require(length > 0, ErrorKind::precondition, "length must be positive");
  if (r == s.numerical_rank) return 0.0;
  return tail_beta / std::sqrt(static_cast<double>(length)) * tail_sum(s, r);
}

struct LipschitzCheck {
  double lhs = 0.0;  // ‖softmax(a) − softmax(b)‖₁
  double rhs = 0.0;  // ‖a − b‖∞
  bool holds = true;
};

inline constexpr double kLipschitzTolerance = 1e-12;

inline LipschitzCheck verify_lipschitz(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::shape_mismatch, "verify_lipschitz: length mismatch");
  const Vector pa = softmax(a);
  const Vector pb = softmax(b);
  LipschitzCheck c;
  c.lhs = (pa - pb).cwiseAbs().sum();
  for (std::size_t i = 0; i < a.size(); ++i) c.rhs = std::max(c.rhs, std::abs(a[i] - b[i]));
  c.holds = c.lhs <= c.rhs + kLipschitzTolerance;
  return c;
}

struct ChainStep {
  double t = 0.0;
  double mad = 0.0;        // E_q|c − E_q c|
  double variance = 0.0;   // Var_q(c)
  double range_bound = 0.0;  // (max c − min c)² / 4
  bool jensen_ok = true;     // MAD² ≤ Var
  bool popoviciu_ok = true;  // Var ≤ range²/4
};

struct ChainDiagnostics {
  std::vector<ChainStep> steps;
  double lhs = 0.0;
  double rhs = 0.0;
  double mad_integral = 0.0;  // trapezoid rule over the steps
  double slack = 0.0;
  bool integral_ok = true;    // mad_integral ≥ lhs − slack

  bool all_steps_ok() const {
    return std::all_of(steps.begin(), steps.end(), [](const ChainStep& s) { return s.jensen_ok && s.popoviciu_ok; });
  }
};

/// Walks p(t) = softmax(a + t(b − a)) on a uniform grid of `steps` points
/// and checks the intermediate inequalities of the Lipschitz argument.
inline ChainDiagnostics verify_lipschitz_chain(std::span<const double> a, std::span<const double> b, int steps = 64) {
  require(steps >= 2, ErrorKind::precondition, "chain needs at least two steps");
  require(a.size() == b.size(), ErrorKind::shape_mismatch, "verify_lipschitz_chain: length mismatch");
  const auto n = static_cast<Index>(a.size());
  Vector va(n), c(n);
  for (Index i = 0; i < n; ++i) {
    va(i) = a[static_cast<std::size_t>(i)];
    c(i) = b[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)];
  }
  const double range = n > 0 ? c.maxCoeff() - c.minCoeff() : 0.0;

  ChainDiagnostics d;
  const auto direct = verify_lipschitz(a, b);
  d.lhs = direct.lhs;
  d.rhs = direct.rhs;
  for (int s = 0; s < steps; ++s) {
    ChainStep st;
    st.t = static_cast<double>(s) / static_cast<double>(steps - 1);
    const Vector at = va + st.t * c;
    const Vector q = softmax(std::span<const double>(at.data(), static_cast<std::size_t>(n)));
    const double mu = q.dot(c);
    st.mad = q.dot((c.array() - mu).abs().matrix());
    st.variance = q.dot((c.array() - mu).square().matrix());
    st.range_bound = range * range / 4.0;
    const double tol = 1e-10 * (1.0 + st.range_bound);
    st.jensen_ok = st.mad * st.mad <= st.variance + tol;
    st.popoviciu_ok = st.variance <= st.range_bound + tol;
    d.steps.push_back(st);
  }
  const double h = 1.0 / static_cast<double>(steps - 1);
  for (int s = 0; s + 1 < steps; ++s) d.mad_integral += 0.5 * h * (d.steps[s].mad + d.steps[s + 1].mad);
  d.slack = 1e-3 * d.rhs;
  d.integral_ok = d.mad_integral >= d.lhs - d.slack;
  return d;
}

}  // namespace attnspec
