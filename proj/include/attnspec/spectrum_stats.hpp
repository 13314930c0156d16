#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "attnspec/error.hpp"
#include "attnspec/logit_field.hpp"

namespace attnspec {

inline const std::vector<Index> kDefaultRanks{1, 2, 5, 10, 20, 40};
inline const std::vector<double> kDefaultThresholds{0.80, 0.90, 0.95, 0.99};

/// Prefix sums of σ_k². The last prefix doubles as the total so the final
/// fraction is exactly 1.
class VarianceProfile {
 public:
  explicit VarianceProfile(const Vector& sigma) : prefix_(static_cast<std::size_t>(sigma.size()) + 1, 0.0) {
    for (Index k = 0; k < sigma.size(); ++k)
      prefix_[static_cast<std::size_t>(k) + 1] = prefix_[static_cast<std::size_t>(k)] + sigma(k) * sigma(k);
  }

  Index length() const { return static_cast<Index>(prefix_.size()) - 1; }
  double total() const { return prefix_.back(); }

  double fraction(Index r) const {
    require(r >= 1, ErrorKind::precondition, "rank must be >= 1");
    if (total() <= 0.0) return 0.0;
    if (r >= length()) return 1.0;
    return std::min(prefix_[static_cast<std::size_t>(r)] / total(), 1.0);
  }

  Index rank_for(double threshold) const {
    require(threshold > 0.0 && threshold <= 1.0, ErrorKind::precondition, "threshold must lie in (0, 1]");
    if (total() <= 0.0) return 0;
    for (Index r = 1; r < length(); ++r)
      if (fraction(r) >= threshold) return r;
    return length();
  }

 private:
  std::vector<double> prefix_;
};

/// Σ_{k≤r} σ_k² / Σ_k σ_k²; 0 for an all-zero spectrum.
inline double cumulative_variance(const Spectrum& s, Index r) { return VarianceProfile(s.singular_values).fraction(r); }

/// Smallest r whose cumulative variance reaches the threshold.
inline Index effective_rank(const Spectrum& s, double threshold) {
  return VarianceProfile(s.singular_values).rank_for(threshold);
}

inline double pooled_median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::precondition, "median of an empty list");
  for (double v : values) require(std::isfinite(v), ErrorKind::non_finite, "median input is not finite");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Population standard deviation.
inline double standard_deviation(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size()));
}

enum class Source { generated, learned };

inline std::string to_string(Source s) { return s == Source::generated ? "generated" : "learned"; }

struct HeadId {
  std::int64_t layer = 0;
  std::int64_t query_head = 0;
  std::int64_t kv_head = 0;
  std::optional<std::string> text_id;

  auto sort_key() const { return std::make_tuple(layer, query_head, text_id.value_or(""), kv_head); }
};

struct LabeledSpectrum {
  Spectrum spectrum;
  Source source = Source::generated;
  HeadId id;
  Index head_dim = 0;
};

struct SpectrumSummary {
  Source source = Source::generated;
  HeadId id;
  Index head_dim = 0;
  std::vector<std::pair<Index, double>> cumvar;          // (r, fraction)
  std::vector<std::pair<double, Index>> effective_rank;  // (threshold, rank)
};

struct PooledSummary {
  std::size_t count = 0;
  std::vector<std::pair<Index, double>> cumvar_median;
  std::vector<std::pair<double, double>> effective_rank_median;
};

/// Spread of the generated effective rank across texts, per head.
struct TextVariability {
  double threshold = 0.0;
  std::size_t heads = 0;  // heads seen on at least two texts
  double median_std = 0.0;
  double max_std = 0.0;
};

struct SummaryTable {
  std::vector<SpectrumSummary> generated;
  std::vector<SpectrumSummary> learned;
  std::optional<PooledSummary> generated_pool;
  std::optional<PooledSummary> learned_pool;
  std::vector<TextVariability> text_variability;
};

inline SpectrumSummary summarize_one(const LabeledSpectrum& in, const std::vector<Index>& ranks,
                                     const std::vector<double>& thresholds) {
  const VarianceProfile profile(in.spectrum.singular_values);
  SpectrumSummary out{in.source, in.id, in.head_dim, {}, {}};
  for (Index r : ranks) out.cumvar.emplace_back(r, profile.fraction(r));
  for (double t : thresholds) out.effective_rank.emplace_back(t, profile.rank_for(t));
  return out;
}

namespace detail {

inline PooledSummary pool(const std::vector<SpectrumSummary>& rows, const std::vector<Index>& ranks,
                          const std::vector<double>& thresholds) {
  PooledSummary p;
  p.count = rows.size();
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    std::vector<double> v;
    for (const auto& s : rows) v.push_back(s.cumvar[i].second);
    p.cumvar_median.emplace_back(ranks[i], pooled_median(std::move(v)));
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::vector<double> v;
    for (const auto& s : rows) v.push_back(static_cast<double>(s.effective_rank[i].second));
    p.effective_rank_median.emplace_back(thresholds[i], pooled_median(std::move(v)));
  }
  return p;
}

}  // namespace detail

/// Per-head summaries plus pooled medians per source. The input order does
/// not matter: rows are sorted by (layer, query_head, text_id) first.
inline SummaryTable summarize(const std::vector<LabeledSpectrum>& spectra, const std::vector<Index>& ranks,
                              const std::vector<double>& thresholds) {
  require(!spectra.empty(), ErrorKind::precondition, "nothing to summarize");
  require(!ranks.empty() && !thresholds.empty(), ErrorKind::precondition, "empty rank or threshold grid");
  const Index head_dim = spectra.front().head_dim;

  SummaryTable table;
  for (const auto& s : spectra) {
    require(s.head_dim == head_dim, ErrorKind::schema, "inconsistent head dimensions in one pool");
    auto row = summarize_one(s, ranks, thresholds);
    (s.source == Source::generated ? table.generated : table.learned).push_back(std::move(row));
  }
  auto by_id = [](const SpectrumSummary& a, const SpectrumSummary& b) { return a.id.sort_key() < b.id.sort_key(); };
  std::sort(table.generated.begin(), table.generated.end(), by_id);
  std::sort(table.learned.begin(), table.learned.end(), by_id);

  if (!table.generated.empty()) table.generated_pool = detail::pool(table.generated, ranks, thresholds);
  if (!table.learned.empty()) table.learned_pool = detail::pool(table.learned, ranks, thresholds);

  // Group generated rows by head; rows are sorted so each head is contiguous.
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    TextVariability tv{thresholds[t], 0, 0.0, 0.0};
    std::vector<double> stds;
    for (std::size_t i = 0; i < table.generated.size();) {
      std::size_t j = i;
      std::vector<double> ranks_across_texts;
      while (j < table.generated.size() && table.generated[j].id.layer == table.generated[i].id.layer &&
             table.generated[j].id.query_head == table.generated[i].id.query_head) {
        ranks_across_texts.push_back(static_cast<double>(table.generated[j].effective_rank[t].second));
        ++j;
      }
      if (ranks_across_texts.size() >= 2) stds.push_back(standard_deviation(ranks_across_texts));
      i = j;
    }
    if (!stds.empty()) {
      tv.heads = stds.size();
      tv.median_std = pooled_median(stds);
      tv.max_std = *std::max_element(stds.begin(), stds.end());
    }
    table.text_variability.push_back(tv);
  }
  return table;
}

}  // namespace attnspec
