#pragma once

// Interchange format: one directory per extraction run, holding manifest.json
// and headerless little-endian row-major blobs (*.bin).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnspec/error.hpp"
#include "attnspec/matrix.hpp"

namespace attnspec {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kFormatVersion = "1";
inline constexpr const char* kManifestFile = "manifest.json";

enum class EntryKind { query, key, weight_q, weight_k };
enum class DType { f32, f64 };

inline std::string to_string(EntryKind k) {
  switch (k) {
    case EntryKind::query: return "query";
    case EntryKind::key: return "key";
    case EntryKind::weight_q: return "weight_q";
    case EntryKind::weight_k: return "weight_k";
  }
  return "?";
}

inline std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

inline std::size_t dtype_width(DType d) { return d == DType::f32 ? 4 : 8; }

inline bool is_weight(EntryKind k) { return k == EntryKind::weight_q || k == EntryKind::weight_k; }

struct TextInfo {
  std::string text_id;
  std::int64_t token_count = 0;

  bool operator==(const TextInfo&) const = default;
};

struct ManifestEntry {
  EntryKind kind = EntryKind::query;
  std::int64_t layer = 0;
  std::int64_t query_head = 0;
  std::int64_t kv_head = 0;
  std::optional<std::string> text_id;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  DType dtype = DType::f64;
  std::string file;

  bool operator==(const ManifestEntry&) const = default;

  std::string describe() const {
    return to_string(kind) + " entry (layer " + std::to_string(layer) + ", query_head " +
           std::to_string(query_head) + (text_id ? ", text " + *text_id : std::string{}) +
           ", file " + file + ")";
  }
};

struct Manifest {
  std::string format_version = kFormatVersion;
  std::string model_name;
  std::int64_t model_dim = 0;
  std::int64_t head_dim = 0;
  std::int64_t context_length = 0;
  std::vector<TextInfo> texts;
  std::vector<ManifestEntry> entries;

  // Directory the manifest was read from; not serialized.
  fs::path root;
};

namespace detail {

inline EntryKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "query") return EntryKind::query;
  if (s == "key") return EntryKind::key;
  if (s == "weight_q") return EntryKind::weight_q;
  if (s == "weight_k") return EntryKind::weight_k;
  fail(ErrorKind::schema, where + ": unknown kind '" + s + "'");
}

inline DType parse_dtype(const std::string& s, const std::string& where) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  fail(ErrorKind::schema, where + ": unknown dtype '" + s + "'");
}

template <typename T>
T field(const json& obj, const char* name, const std::string& where) {
  auto it = obj.find(name);
  require(it != obj.end(), ErrorKind::schema, where + ": missing field '" + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::schema, where + ": field '" + name + "' has the wrong type");
  }
}

inline std::int64_t positive(const json& obj, const char* name, const std::string& where) {
  auto v = field<std::int64_t>(obj, name, where);
  require(v > 0, ErrorKind::schema, where + ": field '" + name + "' must be positive");
  return v;
}

inline std::int64_t non_negative(const json& obj, const char* name, const std::string& where) {
  auto v = field<std::int64_t>(obj, name, where);
  require(v >= 0, ErrorKind::schema, where + ": field '" + name + "' must be >= 0");
  return v;
}

inline std::uint64_t load_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline std::uint32_t load_le32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline void store_le64(unsigned char* p, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) p[b] = static_cast<unsigned char>(v >> (8 * b));
}

inline void store_le32(unsigned char* p, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) p[b] = static_cast<unsigned char>(v >> (8 * b));
}

}  // namespace detail

inline json to_json(const ManifestEntry& e) {
  json j;
  j["kind"] = to_string(e.kind);
  j["layer"] = e.layer;
  j["query_head"] = e.query_head;
  j["kv_head"] = e.kv_head;
  if (e.text_id) j["text_id"] = *e.text_id;
  j["rows"] = e.rows;
  j["cols"] = e.cols;
  j["dtype"] = to_string(e.dtype);
  j["file"] = e.file;
  return j;
}

inline json to_json(const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["model_name"] = m.model_name;
  j["model_dim"] = m.model_dim;
  j["head_dim"] = m.head_dim;
  j["context_length"] = m.context_length;
  j["texts"] = json::array();
  for (const auto& t : m.texts) j["texts"].push_back({{"text_id", t.text_id}, {"token_count", t.token_count}});
  j["entries"] = json::array();
  for (const auto& e : m.entries) j["entries"].push_back(to_json(e));
  return j;
}

/// Checks every manifest invariant that does not need the filesystem.
inline void validate_structure(const Manifest& m) {
  require(m.format_version == kFormatVersion, ErrorKind::version_mismatch,
          "unsupported format_version '" + m.format_version + "' (expected '" + kFormatVersion + "')");
  require(m.model_dim > 0 && m.head_dim > 0 && m.context_length > 0, ErrorKind::schema,
          "model_dim, head_dim and context_length must be positive");

  std::set<std::string> text_ids;
  for (const auto& t : m.texts) {
    require(!t.text_id.empty(), ErrorKind::schema, "empty text_id in texts");
    require(text_ids.insert(t.text_id).second, ErrorKind::schema, "duplicate text_id '" + t.text_id + "'");
  }

  std::set<std::tuple<std::int64_t, std::int64_t, std::string, int>> seen;
  for (const auto& e : m.entries) {
    const auto where = e.describe();
    require(e.layer >= 0 && e.query_head >= 0 && e.kv_head >= 0, ErrorKind::schema,
            where + ": negative identifier");
    require(!e.file.empty() && fs::path(e.file).is_relative(), ErrorKind::schema,
            where + ": file must be a non-empty relative path");
    if (is_weight(e.kind)) {
      require(!e.text_id.has_value(), ErrorKind::schema, where + ": weight entries carry no text_id");
      require(e.rows == m.head_dim && e.cols == m.model_dim, ErrorKind::schema,
              where + ": weight slices must be head_dim x model_dim");
    } else {
      require(e.text_id.has_value(), ErrorKind::schema, where + ": activation entries need a text_id");
      require(text_ids.count(*e.text_id) == 1, ErrorKind::schema,
              where + ": text_id not listed in texts");
      require(e.rows == m.context_length && e.cols == m.head_dim, ErrorKind::schema,
              where + ": activations must be context_length x head_dim");
    }
    auto key = std::make_tuple(e.layer, e.query_head, e.text_id.value_or(""), static_cast<int>(e.kind));
    require(seen.insert(key).second, ErrorKind::schema, where + ": duplicate (layer, query_head, text_id, kind)");
  }
}

inline Manifest manifest_from_json(const json& j) {
  require(j.is_object(), ErrorKind::schema, "manifest root must be an object");
  Manifest m;
  m.format_version = detail::field<std::string>(j, "format_version", "manifest");
  // Version first so a v2 manifest fails as a version error, not a schema error.
  require(m.format_version == kFormatVersion, ErrorKind::version_mismatch,
          "unsupported format_version '" + m.format_version + "' (expected '" + kFormatVersion + "')");
  m.model_name = detail::field<std::string>(j, "model_name", "manifest");
  m.model_dim = detail::positive(j, "model_dim", "manifest");
  m.head_dim = detail::positive(j, "head_dim", "manifest");
  m.context_length = detail::positive(j, "context_length", "manifest");

  auto texts = detail::field<json>(j, "texts", "manifest");
  require(texts.is_array(), ErrorKind::schema, "manifest: texts must be a list");
  for (const auto& t : texts) {
    require(t.is_object(), ErrorKind::schema, "manifest: texts items must be objects");
    m.texts.push_back({detail::field<std::string>(t, "text_id", "texts"),
                       detail::non_negative(t, "token_count", "texts")});
  }

  auto entries = detail::field<json>(j, "entries", "manifest");
  require(entries.is_array(), ErrorKind::schema, "manifest: entries must be a list");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& ej = entries[i];
    const auto where = "entries[" + std::to_string(i) + "]";
    require(ej.is_object(), ErrorKind::schema, where + " must be an object");
    ManifestEntry e;
    e.kind = detail::parse_kind(detail::field<std::string>(ej, "kind", where), where);
    e.layer = detail::non_negative(ej, "layer", where);
    e.query_head = detail::non_negative(ej, "query_head", where);
    e.kv_head = detail::non_negative(ej, "kv_head", where);
    if (auto it = ej.find("text_id"); it != ej.end() && !it->is_null()) {
      require(it->is_string(), ErrorKind::schema, where + ": text_id must be a string");
      e.text_id = it->get<std::string>();
    }
    e.rows = detail::positive(ej, "rows", where);
    e.cols = detail::positive(ej, "cols", where);
    e.dtype = detail::parse_dtype(detail::field<std::string>(ej, "dtype", where), where);
    e.file = detail::field<std::string>(ej, "file", where);
    m.entries.push_back(std::move(e));
  }
  validate_structure(m);
  return m;
}

/// Reads and fully validates `dir/manifest.json`, including blob sizes.
inline Manifest read_manifest(const fs::path& dir) {
  const auto file = dir / kManifestFile;
  require(fs::is_directory(dir), ErrorKind::missing_file, "not a directory: " + dir.string());
  require(fs::is_regular_file(file), ErrorKind::missing_file, "missing " + file.string());

  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::malformed_json, file.string() + ": " + e.what());
  }

  Manifest m = manifest_from_json(j);
  m.root = dir;
  for (const auto& e : m.entries) {
    const auto blob = dir / e.file;
    require(fs::is_regular_file(blob), ErrorKind::missing_file, e.describe() + ": blob not found");
    const auto expected = static_cast<std::uintmax_t>(e.rows * e.cols) * dtype_width(e.dtype);
    const auto actual = fs::file_size(blob);
    require(actual == expected, ErrorKind::size_mismatch,
            e.describe() + ": expected " + std::to_string(expected) + " bytes, found " + std::to_string(actual));
  }
  return m;
}

/// Loads one blob as f64. f32 data is widened value by value.
inline Matrix read_matrix(const Manifest& manifest, const ManifestEntry& entry) {
  require(std::find(manifest.entries.begin(), manifest.entries.end(), entry) != manifest.entries.end(),
          ErrorKind::precondition, entry.describe() + ": entry does not belong to manifest");
  const auto path = manifest.root / entry.file;
  const auto count = static_cast<std::size_t>(entry.rows * entry.cols);
  const auto width = dtype_width(entry.dtype);

  std::vector<unsigned char> bytes(count * width);
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(in.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorKind::io,
          "short read on " + path.string());

  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = bytes.data() + i * width;
    double v = entry.dtype == DType::f64 ? std::bit_cast<double>(detail::load_le64(p))
                                         : static_cast<double>(std::bit_cast<float>(detail::load_le32(p)));
    require(std::isfinite(v), ErrorKind::non_finite,
            entry.describe() + ": non-finite value at flat index " + std::to_string(i));
    values[i] = v;
  }
  return from_row_major(values, entry.rows, entry.cols);
}

/// Writes a headerless little-endian blob. f32 output rounds each value.
inline void write_matrix_blob(const Matrix& m, const fs::path& path, DType dtype) {
  const auto flat = to_row_major(m);
  const auto width = dtype_width(dtype);
  std::vector<unsigned char> bytes(flat.size() * width);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    unsigned char* p = bytes.data() + i * width;
    if (dtype == DType::f64)
      detail::store_le64(p, std::bit_cast<std::uint64_t>(flat[i]));
    else
      detail::store_le32(p, std::bit_cast<std::uint32_t>(static_cast<float>(flat[i])));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed on " + path.string());
}

inline void write_json_file(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write failed on " + path.string());
}

inline void write_manifest(const Manifest& m, const fs::path& dir) {
  validate_structure(m);
  write_json_file(to_json(m), dir / kManifestFile);
}

/// Serializes a report. nlohmann::json objects are std::map backed, so keys
/// come out sorted, and doubles are printed in shortest round-trip form.
inline void write_report(const json& report, const fs::path& path) { write_json_file(report, path); }

}  // namespace attnspec
