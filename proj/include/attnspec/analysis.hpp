#pragma once

// Batch analysis over interchange directories: per-head spectra, summary
// statistics and bound checks, reduced into a versioned JSON report.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnspec/error.hpp"
#include "attnspec/logit_field.hpp"
#include "attnspec/softmax_bounds.hpp"
#include "attnspec/spectrum_stats.hpp"
#include "attnspec/tensor_io.hpp"
#include "attnspec/weight_spectrum.hpp"

namespace attnspec {

inline constexpr const char* kReportVersion = "1";
inline const std::vector<Index> kDefaultTruncationRanks{10, 20, 40};

inline constexpr double kOrthogonalityTolerance = 1e-8;
inline constexpr double kBoundSlack = 1e-9;

enum class TableFormat { text, csv, json };

struct RunConfig {
  std::vector<fs::path> inputs;
  std::vector<Index> ranks = kDefaultRanks;
  std::vector<double> thresholds = kDefaultThresholds;
  std::vector<Index> truncation_ranks = kDefaultTruncationRanks;
  std::optional<fs::path> output;
  TableFormat format = TableFormat::text;
  unsigned jobs = 0;  // 0 = hardware concurrency
};

inline void validate(const RunConfig& c) {
  require(!c.inputs.empty(), ErrorKind::precondition, "at least one --input directory is required");
  auto strictly_sorted = [](const auto& v) { return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end(); };
  require(!c.ranks.empty() && strictly_sorted(c.ranks), ErrorKind::precondition, "--ranks must be non-empty and ascending");
  require(!c.thresholds.empty() && strictly_sorted(c.thresholds), ErrorKind::precondition,
          "--thresholds must be non-empty and ascending");
  require(!c.truncation_ranks.empty() && strictly_sorted(c.truncation_ranks), ErrorKind::precondition,
          "--trunc-ranks must be non-empty and ascending");
  require(c.ranks.front() >= 1, ErrorKind::precondition, "--ranks must be >= 1");
  require(c.thresholds.front() > 0.0 && c.thresholds.back() <= 1.0, ErrorKind::precondition,
          "--thresholds must lie in (0, 1]");
  require(c.truncation_ranks.front() >= 0, ErrorKind::precondition, "--trunc-ranks must be >= 0");
}

/// Truncation statistics for one requested rank. When the request exceeds
/// the numerical rank, the full field is used and the bound is zero.
struct TruncationCheck {
  Index requested = 0;
  Index used = 0;
  double mean_l1 = 0.0;
  double max_l1 = 0.0;
  double tail_beta = 0.0;
  double bound = 0.0;
  bool holds = true;
};

struct HeadAnalysis {
  HeadId id;
  Index length = 0;
  Index head_dim = 0;
  Spectrum spectrum;  // values only; vectors are dropped after the checks
  double row_sum_residual = 0.0;
  double row_sum_tolerance = 0.0;
  bool rank_bound_ok = true;
  double max_ones_projection = 0.0;  // max_k |v_kᵀ1| over retained vectors
  bool orthogonality_ok = true;
  std::vector<double> betas;  // every retained vector, both sides
  double median_beta = 0.0;
  double max_beta = 0.0;
  std::vector<TruncationCheck> truncations;

  bool row_sum_ok() const { return row_sum_residual <= row_sum_tolerance; }
  bool bounds_ok() const {
    return std::all_of(truncations.begin(), truncations.end(), [](const auto& t) { return t.holds; });
  }
};

/// Full treatment of one (head, text) unit.
inline HeadAnalysis analyze_head(const Matrix& queries, const Matrix& keys, Index head_dim,
                                 const std::vector<Index>& truncation_ranks, HeadId id = {}) {
  HeadAnalysis out;
  out.id = std::move(id);
  out.head_dim = head_dim;

  const LogitField field = row_center(compute_logits(queries, keys, head_dim));
  const Index length = field.length();
  out.length = length;
  out.row_sum_residual = field.max_abs_row_sum();
  out.row_sum_tolerance = field.row_sum_tolerance();

  Spectrum s = svd_field(field.centered, true);
  const double lead = s.leading();
  if (length > head_dim + 1) out.rank_bound_ok = s.singular_values(head_dim + 1) <= kRankBoundTolerance * lead;

  const auto& v = *s.right_vectors;
  const double ones_tol = kOrthogonalityTolerance * std::sqrt(static_cast<double>(length));
  for (Index k = 0; k < s.numerical_rank; ++k)
    out.max_ones_projection = std::max(out.max_ones_projection, std::abs(v.col(k).sum()));
  out.orthogonality_ok = out.max_ones_projection <= ones_tol;

  const auto deloc = delocalization_beta(s, length);
  out.median_beta = deloc.median_beta;
  out.max_beta = deloc.max_beta;
  out.betas.reserve(deloc.per_vector_beta.size());
  for (const auto& b : deloc.per_vector_beta) out.betas.push_back(b.beta);

  std::vector<Index> used;
  for (Index r : truncation_ranks) used.push_back(std::min(r, s.numerical_rank));
  const auto sweep = truncation_sweep(field.centered, s, used);
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    TruncationCheck t;
    t.requested = truncation_ranks[i];
    t.used = used[i];
    t.mean_l1 = sweep[i].mean_l1;
    t.max_l1 = sweep[i].max_l1;
    t.tail_beta = deloc.tail_beta(t.used);
    t.bound = truncation_bound(t.tail_beta, s, t.used, length);
    t.holds = t.max_l1 <= t.bound + kBoundSlack;
    out.truncations.push_back(t);
  }

  s.left_vectors.reset();
  s.right_vectors.reset();
  out.spectrum = std::move(s);
  return out;
}

struct LearnedAnalysis {
  HeadId id;
  Spectrum spectrum;
};

/// Runs `work(i)` for i in [0, count) on a pool of workers. Each index is
/// handled exactly once; the first exception is rethrown on the caller.
template <typename Work>
void parallel_for(std::size_t count, unsigned jobs, Work&& work) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct ModelAnalysis {
  Manifest manifest;
  std::vector<HeadAnalysis> generated;
  std::vector<LearnedAnalysis> learned;
  std::vector<std::string> violations;
};

namespace detail {

struct UnitEntries {
  const ManifestEntry* first = nullptr;   // query / weight_q
  const ManifestEntry* second = nullptr;  // key / weight_k
};

using UnitKey = std::tuple<std::int64_t, std::int64_t, std::string>;

inline std::string unit_name(const UnitKey& k) {
  return "layer " + std::to_string(std::get<0>(k)) + " query_head " + std::to_string(std::get<1>(k)) +
         (std::get<2>(k).empty() ? std::string{} : " text " + std::get<2>(k));
}

}  // namespace detail

/// Reads one interchange directory and analyzes every head in it.
inline ModelAnalysis analyze_directory(const fs::path& dir, const RunConfig& config) {
  ModelAnalysis out;
  out.manifest = read_manifest(dir);
  const Manifest& m = out.manifest;

  std::map<detail::UnitKey, detail::UnitEntries> activations, weights;
  for (const auto& e : m.entries) {
    auto& slot = is_weight(e.kind) ? weights[{e.layer, e.query_head, ""}]
                                   : activations[{e.layer, e.query_head, *e.text_id}];
    (e.kind == EntryKind::query || e.kind == EntryKind::weight_q ? slot.first : slot.second) = &e;
  }
  for (const auto& [key, u] : activations) {
    require(u.first && u.second, ErrorKind::schema, detail::unit_name(key) + ": query/key pair incomplete");
    require(u.first->kv_head == u.second->kv_head, ErrorKind::schema,
            detail::unit_name(key) + ": query and key disagree on kv_head");
  }
  for (const auto& [key, u] : weights)
    require(u.first && u.second, ErrorKind::schema, detail::unit_name(key) + ": weight_q/weight_k pair incomplete");

  std::vector<std::pair<detail::UnitKey, detail::UnitEntries>> gen_units(activations.begin(), activations.end());
  std::vector<std::pair<detail::UnitKey, detail::UnitEntries>> learn_units(weights.begin(), weights.end());
  out.generated.resize(gen_units.size());
  out.learned.resize(learn_units.size());

  const Index head_dim = m.head_dim;
  parallel_for(gen_units.size() + learn_units.size(), config.jobs, [&](std::size_t i) {
    if (i < gen_units.size()) {
      const auto& [key, u] = gen_units[i];
      HeadId id{std::get<0>(key), std::get<1>(key), u.first->kv_head, std::get<2>(key)};
      out.generated[i] =
          analyze_head(read_matrix(m, *u.first), read_matrix(m, *u.second), head_dim, config.truncation_ranks, id);
    } else {
      const auto& [key, u] = learn_units[i - gen_units.size()];
      WeightPair pair{read_matrix(m, *u.first), read_matrix(m, *u.second), std::get<0>(key), std::get<1>(key),
                      u.first->kv_head};
      out.learned[i - gen_units.size()] = {HeadId{pair.layer, pair.query_head, pair.kv_head, std::nullopt},
                                           interaction_singular_values(pair)};
    }
  });

  for (const auto& h : out.generated) {
    const auto name = detail::unit_name({h.id.layer, h.id.query_head, h.id.text_id.value_or("")});
    if (!h.row_sum_ok()) out.violations.push_back(name + ": row sums of the centered field exceed tolerance");
    if (!h.rank_bound_ok) out.violations.push_back(name + ": singular value beyond d_h + 1 above tolerance");
    if (!h.orthogonality_ok) out.violations.push_back(name + ": right singular vector not orthogonal to 1");
    for (const auto& t : h.truncations)
      if (!t.holds)
        out.violations.push_back(name + ": truncation error exceeds bound at r = " + std::to_string(t.requested));
  }
  return out;
}

namespace detail {

inline json head_id_json(const HeadId& id) {
  json j{{"layer", id.layer}, {"query_head", id.query_head}, {"kv_head", id.kv_head}};
  if (id.text_id) j["text_id"] = *id.text_id;
  return j;
}

inline json pool_json(const std::optional<PooledSummary>& p) {
  json j{{"count", 0}, {"cumvar_median", json::array()}, {"effective_rank_median", json::array()}};
  if (!p) return j;
  j["count"] = p->count;
  for (const auto& [r, v] : p->cumvar_median) j["cumvar_median"].push_back({{"r", r}, {"median", v}});
  for (const auto& [t, v] : p->effective_rank_median)
    j["effective_rank_median"].push_back({{"threshold", t}, {"median", v}});
  return j;
}

inline json summary_json(const SpectrumSummary& s) {
  json j = head_id_json(s.id);
  j["cumvar"] = json::array();
  for (const auto& [r, v] : s.cumvar) j["cumvar"].push_back({{"r", r}, {"fraction", v}});
  j["effective_rank"] = json::array();
  for (const auto& [t, k] : s.effective_rank) j["effective_rank"].push_back({{"threshold", t}, {"rank", k}});
  return j;
}

}  // namespace detail

/// Reduces one model's analysis into its report section. Everything is
/// sorted by identifiers first, so the result does not depend on scheduling.
inline json model_report(const ModelAnalysis& a, const RunConfig& config) {
  const Manifest& m = a.manifest;
  require(!a.generated.empty() || !a.learned.empty(), ErrorKind::schema,
          m.root.string() + ": manifest holds no heads to analyze");

  std::vector<LabeledSpectrum> labeled;
  for (const auto& h : a.generated) labeled.push_back({h.spectrum, Source::generated, h.id, m.head_dim});
  for (const auto& l : a.learned) labeled.push_back({l.spectrum, Source::learned, l.id, m.head_dim});
  const SummaryTable table = summarize(labeled, config.ranks, config.thresholds);

  std::vector<const HeadAnalysis*> heads;
  for (const auto& h : a.generated) heads.push_back(&h);
  std::sort(heads.begin(), heads.end(), [](auto* x, auto* y) { return x->id.sort_key() < y->id.sort_key(); });

  json j;
  j["model_name"] = m.model_name;
  j["model_dim"] = m.model_dim;
  j["head_dim"] = m.head_dim;
  j["context_length"] = m.context_length;
  j["texts"] = json::array();
  for (const auto& t : m.texts) j["texts"].push_back(t.text_id);
  j["generated"] = detail::pool_json(table.generated_pool);
  j["learned"] = detail::pool_json(table.learned_pool);

  j["text_variability"] = json::array();
  for (const auto& tv : table.text_variability)
    j["text_variability"].push_back(
        {{"threshold", tv.threshold}, {"heads", tv.heads}, {"median_std", tv.median_std}, {"max_std", tv.max_std}});

  std::vector<double> betas;
  for (const auto* h : heads) betas.insert(betas.end(), h->betas.begin(), h->betas.end());
  json deloc{{"vector_count", betas.size()}};
  if (!betas.empty()) {
    deloc["median_beta"] = pooled_median(betas);
    deloc["max_beta"] = *std::max_element(betas.begin(), betas.end());
  }
  j["delocalization"] = deloc;

  j["truncation"] = json::array();
  for (std::size_t i = 0; i < config.truncation_ranks.size() && !heads.empty(); ++i) {
    std::vector<double> means, maxes, bounds;
    std::map<std::string, double> per_text_max;
    std::size_t violations = 0;
    for (const auto* h : heads) {
      const auto& t = h->truncations[i];
      means.push_back(t.mean_l1);
      maxes.push_back(t.max_l1);
      bounds.push_back(t.bound);
      auto& slot = per_text_max[h->id.text_id.value_or("")];
      slot = std::max(slot, t.max_l1);
      if (!t.holds) ++violations;
    }
    j["truncation"].push_back({{"r", config.truncation_ranks[i]},
                               {"median_mean_l1", pooled_median(means)},
                               {"median_max_l1", pooled_median(maxes)},
                               {"max_l1", *std::max_element(maxes.begin(), maxes.end())},
                               {"per_text_max_l1", per_text_max},
                               {"median_bound", pooled_median(bounds)},
                               {"bound_violations", violations}});
  }

  json gen_rows = json::array();
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto* h = heads[i];
    json row = detail::summary_json(table.generated[i]);
    row["numerical_rank"] = h->spectrum.numerical_rank;
    row["median_beta"] = h->median_beta;
    row["max_beta"] = h->max_beta;
    row["truncation"] = json::array();
    for (const auto& t : h->truncations)
      row["truncation"].push_back({{"r", t.requested},
                                   {"rank_used", t.used},
                                   {"mean_l1", t.mean_l1},
                                   {"max_l1", t.max_l1},
                                   {"tail_beta", t.tail_beta},
                                   {"bound", t.bound},
                                   {"holds", t.holds}});
    gen_rows.push_back(std::move(row));
  }
  json learned_rows = json::array();
  for (const auto& s : table.learned) learned_rows.push_back(detail::summary_json(s));
  j["heads"] = {{"generated", gen_rows}, {"learned", learned_rows}};

  double residual = 0.0;
  for (const auto* h : heads) residual = std::max(residual, h->row_sum_residual);
  j["invariants"] = {{"max_row_sum_residual", residual}, {"violations", a.violations}};
  return j;
}

struct AnalysisResult {
  json report;
  std::size_t violation_count = 0;
};

/// Analyzes every input directory and assembles the versioned report. Models
/// are ordered by name, then by input path.
inline AnalysisResult run_analysis(const RunConfig& config) {
  validate(config);
  std::vector<std::pair<std::string, json>> models;
  AnalysisResult result;
  for (const auto& dir : config.inputs) {
    const auto a = analyze_directory(dir, config);
    result.violation_count += a.violations.size();
    models.emplace_back(a.manifest.model_name + '\0' + dir.string(), model_report(a, config));
  }
  std::stable_sort(models.begin(), models.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  json report;
  report["report_version"] = kReportVersion;
  report["config"] = {{"ranks", config.ranks},
                      {"thresholds", config.thresholds},
                      {"truncation_ranks", config.truncation_ranks}};
  report["models"] = json::array();
  for (auto& [_, j] : models) report["models"].push_back(std::move(j));
  result.report = std::move(report);
  return result;
}

}  // namespace attnspec
