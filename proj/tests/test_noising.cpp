#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "osmalign/noising.hpp"
#include "support/oracles.hpp"

using namespace osmalign;
using osmalign::testing::square;

namespace {

PolygonBatch random_batch(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<Polygon> polys;
  for (int k = 0; k < n; ++k) polys.push_back(osmalign::testing::random_polygon(rng));
  return pad_batch(polys);
}

}  // namespace

TEST(SampleNoise, ZeroSigmaGivesZeroField) {
  const PolygonBatch b = random_batch(1, 30);
  for (auto mode : {NoiseMode::rigid, NoiseMode::per_keypoint}) {
    const NoiseField f = sample_noise(b, {0.0, mode, 9});
    for (const auto& o : f.offsets) EXPECT_EQ(o, (OffsetVec{0, 0}));
  }
}

TEST(SampleNoise, RigidModeSharesOffsetWithinInstance) {
  const PolygonBatch b = random_batch(2, 50);
  const NoiseField f = sample_noise(b, {20.0, NoiseMode::rigid, 3});
  for (std::size_t i = 0; i < b.count(); ++i) {
    for (std::size_t k = 1; k < b.vertex_count(i); ++k) EXPECT_EQ(f.at(i, k), f.at(i, 0));
    for (std::size_t k = b.vertex_count(i); k < b.max_vertices(); ++k) EXPECT_EQ(f.at(i, k), (OffsetVec{0, 0}));
  }
}

TEST(SampleNoise, PerKeypointModeVariesWithinInstance) {
  const PolygonBatch b = pad_batch(std::vector<Polygon>{square(0, 0, 4)});
  const NoiseField f = sample_noise(b, {20.0, NoiseMode::per_keypoint, 3});
  EXPECT_NE(f.at(0, 0), f.at(0, 1));
}

TEST(SampleNoise, NegativeSigmaRejected) {
  const PolygonBatch b = random_batch(3, 2);
  EXPECT_THROW(sample_noise(b, {-1.0, NoiseMode::rigid, 0}), InvalidArgument);
  EXPECT_THROW(sample_noise(b, {std::nan(""), NoiseMode::rigid, 0}), InvalidArgument);
}

TEST(SampleNoise, DeterministicUnderSeed) {
  const PolygonBatch b = random_batch(4, 40);
  const NoiseConfig cfg{15.0, NoiseMode::per_keypoint, 123};
  EXPECT_EQ(sample_noise(b, cfg).offsets, sample_noise(b, cfg).offsets);
  NoiseConfig other = cfg;
  other.seed = 124;
  EXPECT_NE(sample_noise(b, cfg).offsets, sample_noise(b, other).offsets);
}

TEST(SampleNoise, RigidMomentsMatchSigma) {
  // 10^5 single-vertex instances; the sample mean has std 10/sqrt(1e5) ~ 0.032
  // and the sample std has std ~ 10/sqrt(2e5) ~ 0.022, so the bands are > 3 sigma.
  PolygonBatch b(100000, 1);
  for (std::size_t i = 0; i < b.count(); ++i) b.valid(i, 0) = 1;
  const NoiseField f = sample_noise(b, {10.0, NoiseMode::rigid, 2025});
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  for (const auto& o : f.offsets) {
    sx += o.dx;
    sy += o.dy;
    sxx += o.dx * o.dx;
    syy += o.dy * o.dy;
  }
  const double n = static_cast<double>(f.offsets.size());
  const double mx = sx / n, my = sy / n;
  const double stdx = std::sqrt((sxx - n * mx * mx) / (n - 1)), stdy = std::sqrt((syy - n * my * my) / (n - 1));
  EXPECT_GE(mx, -0.1);
  EXPECT_LE(mx, 0.1);
  EXPECT_GE(my, -0.1);
  EXPECT_LE(my, 0.1);
  EXPECT_GE(stdx, 9.8);
  EXPECT_LE(stdx, 10.2);
  EXPECT_GE(stdy, 9.8);
  EXPECT_LE(stdy, 10.2);
}

TEST(Inject, ZeroFieldIsIdentityUnderMask) {
  const PolygonBatch b = random_batch(5, 20);
  const NoisyBatch nb = inject(b, sample_noise(b, {0.0, NoiseMode::rigid, 0}));
  for (std::size_t i = 0; i < b.count(); ++i)
    for (std::size_t k = 0; k < b.max_vertices(); ++k) {
      EXPECT_EQ(nb.noisy.x(i, k), b.valid(i, k) ? b.x(i, k) : 0.0);
      EXPECT_EQ(nb.noisy.y(i, k), b.valid(i, k) ? b.y(i, k) : 0.0);
    }
}

TEST(Inject, SignConventionOnSquare) {
  const PolygonBatch b = pad_batch(std::vector<Polygon>{square(10, 10, 4)});
  NoiseField f{1, 4, std::vector<OffsetVec>(4, OffsetVec{5, -3})};
  const NoisyBatch nb = inject(b, f);
  EXPECT_EQ(nb.noisy.polygon(0), square(5, 13, 4));
  EXPECT_EQ(nb.recovery[0], (OffsetVec{5, -3}));
}

TEST(Inject, ShapeMismatchRejected) {
  const PolygonBatch b = random_batch(6, 3);
  NoiseField f{2, b.max_vertices(), std::vector<OffsetVec>(2 * b.max_vertices())};
  EXPECT_THROW(inject(b, f), InvalidArgument);
}

TEST(Inject, RigidRoundTripRecoversFootprint) {
  const PolygonBatch b = random_batch(7, 1000);
  const NoisyBatch nb = inject(b, sample_noise(b, {20.0, NoiseMode::rigid, 8}));
  for (std::size_t i = 0; i < b.count(); ++i) {
    const Polygon back = translate(nb.noisy.polygon(i), nb.recovery[i]);
    const Polygon orig = b.polygon(i);
    for (std::size_t k = 0; k < orig.size(); ++k) {
      EXPECT_NEAR(back.vertices[k].x, orig.vertices[k].x, 1e-9);
      EXPECT_NEAR(back.vertices[k].y, orig.vertices[k].y, 1e-9);
    }
  }
}

TEST(Inject, PerKeypointRecoveryIsKeypointMean) {
  const PolygonBatch b = random_batch(8, 200);
  const NoiseField f = sample_noise(b, {20.0, NoiseMode::per_keypoint, 9});
  const NoisyBatch nb = inject(b, f);
  for (std::size_t i = 0; i < b.count(); ++i) {
    // vertex-mean centroid of noisy + recovery = vertex-mean centroid of footprint
    const Point2 a = vertex_mean(nb.noisy.polygon(i)) + nb.recovery[i];
    const Point2 c = vertex_mean(b.polygon(i));
    EXPECT_NEAR(a.x, c.x, 1e-9);
    EXPECT_NEAR(a.y, c.y, 1e-9);
  }
}

TEST(Subsample, FullSizeIsPermutation) {
  const auto idx = subsample_indices(50, 50, 11);
  std::set<std::size_t> s(idx.begin(), idx.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.rbegin(), 49u);
}

TEST(Subsample, SingleInstanceComesFromInput) {
  const PolygonBatch b = random_batch(9, 12);
  const PolygonBatch one = subsample(b, 1, 4);
  ASSERT_EQ(one.count(), 1u);
  const auto polys = unpad(b);
  EXPECT_NE(std::find(polys.begin(), polys.end(), one.polygon(0)), polys.end());
}

TEST(Subsample, DeterministicAndSeedSensitive) {
  EXPECT_EQ(subsample_indices(100, 10, 5), subsample_indices(100, 10, 5));
  EXPECT_NE(subsample_indices(100, 10, 5), subsample_indices(100, 10, 6));
}

TEST(Subsample, OutOfRangeRejected) {
  EXPECT_THROW(subsample_indices(5, 0, 1), InvalidArgument);
  EXPECT_THROW(subsample_indices(5, 6, 1), InvalidArgument);
}

TEST(Subsample, SelectionIsRoughlyUniform) {
  // Each index should be chosen with probability m'/m = 0.2.
  std::vector<int> hits(20, 0);
  for (std::uint64_t s = 0; s < 5000; ++s)
    for (auto i : subsample_indices(20, 4, s)) ++hits[i];
  for (int h : hits) EXPECT_NEAR(h / 5000.0, 0.2, 0.03);
}
