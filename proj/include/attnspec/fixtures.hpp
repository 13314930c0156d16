#pragma once

// Deterministic synthetic inputs. Randomness comes from std::mt19937_64,
// whose output sequence is fixed by the C++ standard; normals use the
// Box-Muller cosine branch, two 64-bit draws per value, filled row-major.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include <Eigen/QR>

#include "attnspec/error.hpp"
#include "attnspec/matrix.hpp"
#include "attnspec/tensor_io.hpp"
#include "attnspec/weight_spectrum.hpp"

namespace attnspec {

struct FixtureSpec {
  std::uint64_t seed = 0;
  Index length = 64;      // L
  Index head_dim = 16;    // d_h
  Index model_dim = 64;   // d_model
  std::optional<Index> planted_rank;
  double noise_level = 0.0;
};

inline void validate(const FixtureSpec& spec) {
  require(spec.length > 0 && spec.head_dim > 0 && spec.model_dim > 0, ErrorKind::precondition,
          "fixture dimensions must be positive");
  require(spec.noise_level >= 0.0, ErrorKind::precondition, "noise_level must be nonnegative");
  if (spec.planted_rank)
    require(*spec.planted_rank >= 1 && *spec.planted_rank <= spec.head_dim, ErrorKind::precondition,
            "planted_rank must lie in [1, head_dim]");
}

/// SplitMix64 finalizer; derives independent sub-seeds from a base seed and
/// a tag sequence.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t s = mix_seed(base);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in (0, 1], 53 bits.
  double uniform() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Matrix matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  /// rows x cols with orthonormal rows (rows ≤ cols), via Householder QR of
  /// a Gaussian matrix with sign-fixed R diagonal.
  Matrix orthonormal_rows(Index rows, Index cols) {
    require(rows <= cols, ErrorKind::precondition, "orthonormal_rows needs rows <= cols");
    const Matrix g = matrix(cols, rows);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(cols, rows);
    for (Index k = 0; k < rows; ++k)
      if (qr.matrixQR()(k, k) < 0) q.col(k) = -q.col(k);
    return q.transpose();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct QueryKey {
  Matrix queries;
  Matrix keys;
};

/// Q and K for one head. `shared_seed` drives everything the key side owns
/// (so query heads of one KV group see the same keys), `query_seed` the rest.
/// With a planted rank ρ both factor through a shared L x ρ latent F:
/// K = F B, Q = F O B with B orthonormal rows and O a random ρ x ρ rotation,
/// so Q Kᵀ = F O Fᵀ has exactly ρ well-conditioned singular values.
inline QueryKey synth_qk_seeded(const FixtureSpec& spec, std::uint64_t shared_seed, std::uint64_t query_seed) {
  validate(spec);
  NormalStream shared(shared_seed);
  NormalStream own(query_seed);
  QueryKey qk;
  if (!spec.planted_rank) {
    qk.keys = shared.matrix(spec.length, spec.head_dim);
    qk.queries = own.matrix(spec.length, spec.head_dim);
  } else {
    const Index rho = *spec.planted_rank;
    const Matrix latent = shared.matrix(spec.length, rho);
    const Matrix basis = shared.orthonormal_rows(rho, spec.head_dim);
    const Matrix rotation = own.orthonormal_rows(rho, rho);
    qk.keys = latent * basis;
    qk.queries = latent * rotation * basis;
  }
  if (spec.noise_level > 0.0) {
    qk.keys += spec.noise_level * shared.matrix(spec.length, spec.head_dim);
    qk.queries += spec.noise_level * own.matrix(spec.length, spec.head_dim);
  }
  return qk;
}

inline QueryKey synth_qk(const FixtureSpec& spec) {
  return synth_qk_seeded(spec, derive_seed(spec.seed, 0), derive_seed(spec.seed, 1));
}

enum class WeightStyle {
  gaussian,         // i.i.d. standard normal entries
  orthogonal_rows,  // W_Q = W_K with orthonormal rows: flat spectrum of ones
  decaying,         // λ_k = decay^(k-1) exactly
};

inline WeightPair synth_weights(const FixtureSpec& spec, WeightStyle style = WeightStyle::gaussian,
                                double decay = 0.5) {
  validate(spec);
  require(spec.head_dim < spec.model_dim, ErrorKind::precondition, "weights need head_dim < model_dim");
  NormalStream rng(derive_seed(spec.seed, 2));
  WeightPair pair;
  switch (style) {
    case WeightStyle::gaussian:
      pair.query_weight = rng.matrix(spec.head_dim, spec.model_dim);
      pair.key_weight = rng.matrix(spec.head_dim, spec.model_dim);
      break;
    case WeightStyle::orthogonal_rows:
      pair.query_weight = rng.orthonormal_rows(spec.head_dim, spec.model_dim);
      pair.key_weight = pair.query_weight;
      break;
    case WeightStyle::decaying: {
      Vector scale(spec.head_dim);
      for (Index k = 0; k < spec.head_dim; ++k) scale(k) = std::pow(decay, static_cast<double>(k));
      pair.query_weight = scale.asDiagonal() * rng.orthonormal_rows(spec.head_dim, spec.model_dim);
      pair.key_weight = rng.orthonormal_rows(spec.head_dim, spec.model_dim);
      break;
    }
  }
  return pair;
}

/// How a fixture directory is populated around one FixtureSpec.
struct FixtureLayout {
  std::string model_name = "fixture";
  Index layers = 1;
  Index query_heads = 1;
  Index group_size = 1;  // query heads per KV head
  Index texts = 1;
  bool with_weights = true;
  DType dtype = DType::f64;
};

inline std::string fixture_text_id(Index t) { return "text" + std::to_string(t); }

/// Writes a complete interchange directory (manifest + blobs).
inline Manifest write_fixture_manifest(const FixtureSpec& spec, const FixtureLayout& layout, const fs::path& dir) {
  validate(spec);
  require(layout.layers > 0 && layout.query_heads > 0 && layout.texts > 0 && layout.group_size > 0,
          ErrorKind::precondition, "fixture layout counts must be positive");
  require(layout.query_heads % layout.group_size == 0, ErrorKind::precondition,
          "query_heads must be a multiple of group_size");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

  Manifest m;
  m.model_name = layout.model_name;
  m.model_dim = spec.model_dim;
  m.head_dim = spec.head_dim;
  m.context_length = spec.length;
  for (Index t = 0; t < layout.texts; ++t) m.texts.push_back({fixture_text_id(t), spec.length});

  auto add = [&](EntryKind kind, Index layer, Index qh, Index kvh, std::optional<std::string> text,
                 const Matrix& data) {
    std::string name = to_string(kind) + "_l" + std::to_string(layer) + "_h" + std::to_string(qh) +
                       (text ? "_" + *text : std::string{}) + ".bin";
    write_matrix_blob(data, dir / name, layout.dtype);
    m.entries.push_back({kind, layer, qh, kvh, std::move(text), data.rows(), data.cols(), layout.dtype, name});
  };

  for (Index layer = 0; layer < layout.layers; ++layer) {
    for (Index qh = 0; qh < layout.query_heads; ++qh) {
      const Index kvh = qh / layout.group_size;
      for (Index t = 0; t < layout.texts; ++t) {
        const auto qk = synth_qk_seeded(spec, derive_seed(spec.seed, 10, layer, kvh, t),
                                        derive_seed(spec.seed, 11, layer, qh, t));
        add(EntryKind::query, layer, qh, kvh, fixture_text_id(t), qk.queries);
        add(EntryKind::key, layer, qh, kvh, fixture_text_id(t), qk.keys);
      }
      if (layout.with_weights && spec.head_dim < spec.model_dim) {
        FixtureSpec ws = spec;
        ws.seed = derive_seed(spec.seed, 12, layer, kvh);
        const auto key_side = synth_weights(ws);
        ws.seed = derive_seed(spec.seed, 13, layer, qh);
        const auto query_side = synth_weights(ws);
        add(EntryKind::weight_q, layer, qh, kvh, std::nullopt, query_side.query_weight);
        add(EntryKind::weight_k, layer, qh, kvh, std::nullopt, key_side.key_weight);
      }
    }
  }
  write_manifest(m, dir);
  m.root = dir;
  return m;
}

}  // namespace attnspec
