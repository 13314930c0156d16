#include <gtest/gtest.h>

#include "attnspec/fixtures.hpp"
#include "attnspec/weight_spectrum.hpp"
#include "test_util.hpp"

using namespace attnspec;

namespace {

WeightPair padded_identity(Index h, Index d) {
  Matrix w = Matrix::Zero(h, d);
  w.leftCols(h).setIdentity();
  return {w, w, 0, 0, 0};
}

double max_relative_gap(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(a(0), b(0));
}

}  // namespace

TEST(InteractionSpectrum, PaddedIdentityIsFlat) {
  const auto pair = padded_identity(8, 20);
  const auto qr = interaction_singular_values(pair);
  ASSERT_EQ(qr.size(), 8);
  for (Index k = 0; k < 8; ++k) EXPECT_NEAR(qr.singular_values(k), 1.0, 1e-14);
  const auto full = full_interaction_svd(pair);
  for (Index k = 0; k < 8; ++k) EXPECT_NEAR(full.singular_values(k), 1.0, 1e-14);
}

TEST(InteractionSpectrum, ZeroQueryWeight) {
  auto pair = padded_identity(4, 10);
  pair.query_weight.setZero();
  const auto s = interaction_singular_values(pair);
  EXPECT_EQ(s.size(), 4);
  EXPECT_TRUE(s.singular_values.isZero(0.0));
  EXPECT_EQ(s.numerical_rank, 0);
}

TEST(InteractionSpectrum, RankOnePair) {
  std::mt19937_64 rng(9);
  const Vector a = testutil::random_matrix(rng, 12, 1), b = testutil::random_matrix(rng, 12, 1);
  WeightPair pair{Matrix::Zero(4, 12), Matrix::Zero(4, 12), 0, 0, 0};
  pair.query_weight.row(0) = a.transpose();
  pair.key_weight.row(0) = b.transpose();
  const auto full = full_interaction_svd(pair);
  EXPECT_NEAR(full.singular_values(0), a.norm() * b.norm(), 1e-12);
  EXPECT_EQ(full.numerical_rank, 1);
  const auto qr = interaction_singular_values(pair);
  EXPECT_NEAR(qr.singular_values(0), a.norm() * b.norm(), 1e-12);
  EXPECT_LE(qr.singular_values(1), 1e-12 * qr.singular_values(0));
}

TEST(InteractionSpectrum, QrPathMatchesMaterializedOracle) {
  FixtureSpec spec;
  spec.head_dim = 4;
  spec.model_dim = 12;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = seed;
    const auto pair = synth_weights(spec);
    EXPECT_LE(max_relative_gap(interaction_singular_values(pair).singular_values,
                               full_interaction_svd(pair).singular_values),
              1e-10);
  }
}

TEST(InteractionSpectrum, Gpt2ShapedPair) {
  FixtureSpec spec;
  spec.seed = 123;
  spec.head_dim = 64;
  spec.model_dim = 768;
  const auto pair = synth_weights(spec);
  const auto qr = interaction_singular_values(pair);
  const Vector all = materialized_interaction_values(pair);
  EXPECT_EQ(qr.size(), 64);
  EXPECT_LE(max_relative_gap(qr.singular_values, all.head(64)), 1e-10);
  EXPECT_LE(all(64), 1e-10 * all(0));  // rank(M) ≤ d_h
}

TEST(InteractionSpectrum, OrthogonalInvariance) {
  FixtureSpec spec;
  spec.head_dim = 6;
  spec.model_dim = 30;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    spec.seed = seed;
    auto pair = synth_weights(spec);
    NormalStream rng(seed + 1000);
    const Matrix u = rng.orthonormal_rows(6, 6);
    WeightPair rotated{u * pair.query_weight, u * pair.key_weight, 0, 0, 0};
    EXPECT_LE(max_relative_gap(interaction_singular_values(pair).singular_values,
                               interaction_singular_values(rotated).singular_values),
              1e-10);
  }
}

TEST(InteractionSpectrum, PlantedDecay) {
  FixtureSpec spec;
  spec.seed = 4;
  spec.head_dim = 8;
  spec.model_dim = 40;
  const auto s = interaction_singular_values(synth_weights(spec, WeightStyle::decaying, 0.5));
  for (Index k = 0; k < 8; ++k) EXPECT_NEAR(s.singular_values(k), std::pow(0.5, k), 1e-12);
}

TEST(InteractionSpectrum, ShapeViolations) {
  EXPECT_THROW(interaction_singular_values({Matrix::Zero(4, 10), Matrix::Zero(4, 11), 0, 0, 0}), Error);
  EXPECT_THROW(interaction_singular_values({Matrix::Zero(10, 4), Matrix::Zero(10, 4), 0, 0, 0}), Error);
  EXPECT_THROW(full_interaction_svd({Matrix::Zero(4, 1025), Matrix::Zero(4, 1025), 0, 0, 0}), Error);
}
