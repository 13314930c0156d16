#pragma once

// Paper-style tables from a report: one column group per model, holding the
// learned (M) and generated (Ẽ) columns.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnspec/analysis.hpp"
#include "attnspec/error.hpp"

namespace attnspec {

namespace detail {

struct Column {
  std::string model;
  // keyed by grid value (r or threshold); absent when the source is missing
  std::map<double, double> learned;
  std::map<double, double> generated;
};

inline std::map<double, double> pooled_column(const json& pool, const char* list, const char* key) {
  std::map<double, double> out;
  if (pool.is_null()) return out;
  for (const auto& row : pool.at(list)) out[row.at(key).get<double>()] = row.at("median").get<double>();
  return out;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width) {
  // UTF-8 aware enough for the handful of non-ASCII glyphs we print.
  std::size_t glyphs = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++glyphs;
  return glyphs >= width ? s : std::string(width - glyphs, ' ') + s;
}

inline std::string cell(const std::map<double, double>& col, double key, bool percent) {
  auto it = col.find(key);
  if (it == col.end()) return "-";
  // Table cells round half away from zero, like std::round.
  return percent ? fmt("%.0f%%", std::round(100.0 * it->second)) : fmt("%.0f", std::round(it->second));
}

inline std::vector<Column> columns(const json& report, const char* list, const char* key) {
  std::vector<Column> cols;
  for (const auto& m : report.at("models")) {
    Column c;
    c.model = m.at("model_name").get<std::string>();
    c.learned = pooled_column(m.at("learned"), list, key);
    c.generated = pooled_column(m.at("generated"), list, key);
    cols.push_back(std::move(c));
  }
  std::stable_sort(cols.begin(), cols.end(), [](const Column& a, const Column& b) { return a.model < b.model; });
  return cols;
}

inline std::vector<double> grid(const json& report, const char* name) {
  std::vector<double> g;
  for (const auto& v : report.at("config").at(name)) g.push_back(v.get<double>());
  return g;
}

inline std::string grid_label(double v, bool threshold) {
  return threshold ? fmt("%g%%", std::round(v * 1000.0) / 10.0) : fmt("%.0f", v);
}

inline void text_table(std::ostringstream& os, const std::string& title, const std::string& row_header,
                       const std::vector<double>& rows, const std::vector<Column>& cols, bool threshold,
                       bool percent) {
  constexpr std::size_t w = 7;
  os << title << '\n';
  std::string top = pad("", 10), sub = pad(row_header, 10);
  for (const auto& c : cols) {
    top += " | " + pad(c.model, 2 * w + 1);
    sub += " | " + pad("M", w) + " " + pad("Ẽ", w);
  }
  os << top << '\n' << sub << '\n';
  os << std::string(10 + cols.size() * (3 + 2 * w + 1), '-') << '\n';
  for (double r : rows) {
    os << pad(grid_label(r, threshold), 10);
    for (const auto& c : cols) os << " | " << pad(cell(c.learned, r, percent), w) << " " << pad(cell(c.generated, r, percent), w);
    os << '\n';
  }
  os << '\n';
}

inline void csv_table(std::ostringstream& os, const std::string& table, const std::vector<double>& rows,
                      const std::vector<Column>& cols) {
  for (const auto& c : cols)
    for (double r : rows)
      for (int side = 0; side < 2; ++side) {
        const auto& col = side == 0 ? c.learned : c.generated;
        auto it = col.find(r);
        if (it == col.end()) continue;
        os << table << ',' << c.model << ',' << (side == 0 ? "learned" : "generated") << ',' << fmt("%.17g", r)
           << ',' << fmt("%.17g", it->second) << '\n';
      }
}

}  // namespace detail

inline void validate_report(const json& report) {
  require(report.is_object(), ErrorKind::schema, "report root must be an object");
  require(report.value("report_version", "") == std::string(kReportVersion), ErrorKind::version_mismatch,
          "unsupported report_version");
  require(report.contains("config") && report.contains("models") && report.at("models").is_array(),
          ErrorKind::schema, "report lacks config or models");
}

inline std::string render_report(const json& report, TableFormat format) {
  validate_report(report);
  if (format == TableFormat::json) return report.dump(2) + "\n";

  std::ostringstream os;
  try {
    const auto ranks = detail::grid(report, "ranks");
    const auto thresholds = detail::grid(report, "thresholds");
    const auto cumvar = detail::columns(report, "cumvar_median", "r");
    const auto effrank = detail::columns(report, "effective_rank_median", "threshold");

    if (format == TableFormat::csv) {
      os << "table,model,source,key,median\n";
      detail::csv_table(os, "cumulative_variance", ranks, cumvar);
      detail::csv_table(os, "effective_rank", thresholds, effrank);
      return os.str();
    }

    detail::text_table(os, "Cumulative variance captured by the top r components (median over heads)", "r", ranks,
                       cumvar, false, true);
    detail::text_table(os, "Effective rank at variance threshold (median over heads)", "threshold", thresholds,
                       effrank, true, false);

    std::vector<const json*> models;
    for (const auto& m : report.at("models")) models.push_back(&m);
    std::stable_sort(models.begin(), models.end(), [](const json* a, const json* b) {
      return a->at("model_name").get<std::string>() < b->at("model_name").get<std::string>();
    });
    if (!models.empty()) {
      os << "Delocalization and truncation error (pooled over heads and texts)\n";
      for (const auto* m : models) {
        const auto& d = m->at("delocalization");
        os << m->at("model_name").get<std::string>() << ": beta median "
           << (d.contains("median_beta") ? detail::fmt("%.3f", d.at("median_beta").get<double>()) : "-") << ", max "
           << (d.contains("max_beta") ? detail::fmt("%.3f", d.at("max_beta").get<double>()) : "-") << '\n';
        for (const auto& t : m->at("truncation"))
          os << "  r = " << t.at("r").get<Index>() << ": mean-per-row l1 median "
             << detail::fmt("%.4f", t.at("median_mean_l1").get<double>()) << ", worst row median "
             << detail::fmt("%.4f", t.at("median_max_l1").get<double>()) << ", worst row "
             << detail::fmt("%.4f", t.at("max_l1").get<double>()) << ", bound median "
             << detail::fmt("%.4f", t.at("median_bound").get<double>()) << ", violations "
             << t.at("bound_violations").get<std::size_t>() << '\n';
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, std::string("malformed report: ") + e.what());
  }
  return os.str();
}

}  // namespace attnspec
