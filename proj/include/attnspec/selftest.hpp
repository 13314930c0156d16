#pragma once

// Numerical checks that need no model: Lipschitz bound, truncation bound
// soundness, rank bounds, v_k ⊥ 1, QR path against the materialized oracle,
// and planted-rank recovery. Everything is seeded; the log is deterministic.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "attnspec/fixtures.hpp"
#include "attnspec/logit_field.hpp"
#include "attnspec/softmax_bounds.hpp"
#include "attnspec/spectrum_stats.hpp"
#include "attnspec/weight_spectrum.hpp"

namespace attnspec {

enum class Fault { none, sigma_tail };

struct SelftestOptions {
  std::uint64_t seed = 20240607;
  int lipschitz_pairs = 10000;
  int bound_fields = 100;
  int qr_pairs = 50;
  Fault fault = Fault::none;
};

struct CheckOutcome {
  std::string name;
  bool passed = true;
  std::string detail;
};

namespace detail {

inline std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Field shapes cycle through L ∈ {64, 256} x d_h ∈ {16, 64}; two thirds
/// carry a planted rank with light noise.
inline FixtureSpec bound_field_spec(std::uint64_t base, int i) {
  FixtureSpec s;
  s.seed = derive_seed(base, 100, i);
  s.length = (i % 2 == 0) ? 64 : 256;
  s.head_dim = ((i / 2) % 2 == 0) ? 16 : 64;
  s.model_dim = 4 * s.head_dim;
  if (i % 3 != 0) {
    s.planted_rank = 1 + (i % std::min<int>(8, static_cast<int>(s.head_dim)));
    s.noise_level = (i % 3 == 1) ? 1e-3 : 0.0;
  }
  return s;
}

}  // namespace detail

inline CheckOutcome check_lipschitz(const SelftestOptions& o) {
  NormalStream rng(derive_seed(o.seed, 1));
  const int dims[] = {2, 16, 256};
  int violations = 0;
  std::string first;
  double worst_ratio = 0.0;
  for (int p = 0; p < o.lipschitz_pairs; ++p) {
    const int n = dims[p % 3];
    const double scale = 50.0 * rng.uniform();
    std::vector<double> a(static_cast<std::size_t>(n)), b(a.size());
    for (auto& x : a) x = scale * (2.0 * rng.uniform() - 1.0);
    for (auto& x : b) x = scale * (2.0 * rng.uniform() - 1.0);
    const auto c = verify_lipschitz(a, b);
    if (c.rhs > 0) worst_ratio = std::max(worst_ratio, c.lhs / c.rhs);
    if (!c.holds && violations++ == 0) first = "pair " + std::to_string(p);
  }
  return {"lipschitz", violations == 0,
          std::to_string(o.lipschitz_pairs) + " pairs, " + std::to_string(violations) + " violations" +
              (violations ? " (first " + first + ", seed " + detail::hex(o.seed) + ")" : "") +
              ", max lhs/rhs " + detail::num(worst_ratio)};
}

/// Truncation bound, rank bound and v_k ⊥ 1 over the same fixture fields.
inline std::vector<CheckOutcome> check_fields(const SelftestOptions& o) {
  int bound_violations = 0, rank_violations = 0, ortho_violations = 0, checks = 0;
  std::string first_bound, first_rank, first_ortho;
  for (int i = 0; i < o.bound_fields; ++i) {
    const auto spec = detail::bound_field_spec(o.seed, i);
    const auto tag = "field " + std::to_string(i) + " (seed " + detail::hex(spec.seed) + ")";
    const auto qk = synth_qk(spec);
    const auto field = row_center(compute_logits(qk.queries, qk.keys, spec.head_dim));
    Spectrum s = svd_field(field.centered, true);
    const Index length = spec.length;

    if (length > spec.head_dim + 1 && s.singular_values(spec.head_dim + 1) > kRankBoundTolerance * s.leading())
      if (rank_violations++ == 0) first_rank = tag;
    for (Index k = 0; k < s.numerical_rank; ++k)
      if (std::abs(s.right_vectors->col(k).sum()) > 1e-8 * std::sqrt(static_cast<double>(length))) {
        if (ortho_violations++ == 0) first_ortho = tag + " k=" + std::to_string(k + 1);
        break;
      }

    const auto deloc = delocalization_beta(s, length);
    std::vector<Index> ranks;
    for (Index r = 0; r < s.numerical_rank; ++r) ranks.push_back(r);
    const auto sweep = truncation_sweep(field.centered, s, ranks);
    Spectrum bound_spectrum = s;
    if (o.fault == Fault::sigma_tail) bound_spectrum.singular_values *= 1e-3;
    for (const auto& t : sweep) {
      ++checks;
      const double bound = truncation_bound(deloc.tail_beta(t.rank), bound_spectrum, t.rank, length);
      if (t.max_l1 > bound + 1e-9 && bound_violations++ == 0) first_bound = tag + " r=" + std::to_string(t.rank);
    }
  }
  auto line = [](int v, const std::string& first, const std::string& what) {
    return std::to_string(v) + " violations" + (v ? " (first " + first + ")" : "") + what;
  };
  return {
      {"truncation_bound", bound_violations == 0,
       line(bound_violations, first_bound, ", " + std::to_string(checks) + " (field, r) checks")},
      {"rank_bound_field", rank_violations == 0,
       line(rank_violations, first_rank, ", " + std::to_string(o.bound_fields) + " fields")},
      {"ones_orthogonality", ortho_violations == 0,
       line(ortho_violations, first_ortho, ", " + std::to_string(o.bound_fields) + " fields")},
  };
}

inline std::vector<CheckOutcome> check_weights(const SelftestOptions& o) {
  double worst = 0.0;
  int rank_violations = 0;
  for (int i = 0; i < o.qr_pairs; ++i) {
    FixtureSpec s;
    s.seed = derive_seed(o.seed, 200, i);
    s.head_dim = 4 + 4 * (i % 4);
    s.model_dim = 3 * s.head_dim + 8 * (i % 5);
    const auto pair = synth_weights(s);
    const auto qr = interaction_singular_values(pair);
    const Vector all = materialized_interaction_values(pair);
    const double lead = all(0);
    for (Index k = 0; k < s.head_dim; ++k) worst = std::max(worst, std::abs(qr.singular_values(k) - all(k)) / lead);
    for (Index k = s.head_dim; k < all.size(); ++k)
      if (all(k) > 1e-10 * lead) {
        ++rank_violations;
        break;
      }
  }
  return {
      {"qr_vs_materialized", worst <= 1e-10,
       std::to_string(o.qr_pairs) + " pairs, max deviation " + detail::num(worst) + " (relative to lambda_1)"},
      {"rank_bound_interaction", rank_violations == 0,
       std::to_string(rank_violations) + " pairs with more than d_h nonzero values"},
  };
}

inline CheckOutcome check_planted(const SelftestOptions& o) {
  std::string detail_text;
  bool ok = true;
  for (Index rho : {1, 3, 8}) {
    FixtureSpec s;
    s.seed = derive_seed(o.seed, 300, rho);
    s.length = 256;
    s.head_dim = 64;
    s.planted_rank = rho;
    const auto qk = synth_qk(s);
    const auto sp = svd_field(row_center(compute_logits(qk.queries, qk.keys, s.head_dim)).centered, false);
    const Index got = effective_rank(sp, 0.99);
    ok = ok && (got == rho || got == rho + 1);
    detail_text += (detail_text.empty() ? "" : ", ") + std::string("rho ") + std::to_string(rho) + " -> " +
                   std::to_string(got);
  }
  return {"planted_rank", ok, detail_text};
}

/// Runs every check, logging one line each. Returns true when all pass.
inline bool run_selftest(const SelftestOptions& o, std::ostream& log) {
  std::vector<CheckOutcome> all;
  all.push_back(check_lipschitz(o));
  for (auto& c : check_fields(o)) all.push_back(std::move(c));
  for (auto& c : check_weights(o)) all.push_back(std::move(c));
  all.push_back(check_planted(o));

  bool ok = true;
  log << "selftest seed " << detail::hex(o.seed) << '\n';
  for (const auto& c : all) {
    log << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok;
}

}  // namespace attnspec
