#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "osmalign/synth.hpp"
#include "support/oracles.hpp"

using namespace osmalign;

namespace {

SceneConfig small_config(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.width = cfg.height = 128;
  cfg.n_buildings = 4;
  cfg.size_min = 10;
  cfg.size_max = 20;
  cfg.seed = seed;
  return cfg;
}

bool is_on_grid64(double v) { return v * 64.0 == std::round(v * 64.0); }

}  // namespace

TEST(SceneConfig, DefaultsMatchBenchmark) {
  const SceneConfig cfg;
  EXPECT_EQ(cfg.n_buildings, 8);
  EXPECT_EQ(cfg.osm_nu, 20.0);
  EXPECT_EQ(cfg.height_min, 20.0);
  EXPECT_EQ(cfg.height_max, 60.0);
  EXPECT_EQ(cfg.seed, 7u);
}

TEST(SceneConfig, InvalidRejected) {
  SceneConfig c;
  c.height_min = 30;
  c.height_max = 10;
  EXPECT_THROW(generate_scene(c), InvalidArgument);
  c = SceneConfig{};
  c.osm_nu = -1;
  EXPECT_THROW(generate_scene(c), InvalidArgument);
  c = SceneConfig{};
  c.width = 40;
  EXPECT_THROW(generate_scene(c), InvalidArgument);
  c = SceneConfig{};
  c.size_min = 2;
  EXPECT_THROW(generate_scene(c), InvalidArgument);
}

TEST(Synth, GeometricConsistencyIsExact) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Scene sc = generate_scene(small_config(s));
    for (const auto& in : sc.instances) {
      EXPECT_EQ(compose(in.f_vec, in.o_vec), in.r_vec);
      EXPECT_EQ(translate(in.osm, in.f_vec), in.footprint);
      EXPECT_EQ(translate(in.footprint, in.o_vec), in.roof);
      EXPECT_EQ(translate(in.osm, in.r_vec), in.roof);
      for (double v : {in.f_vec.dx, in.f_vec.dy, in.o_vec.dx, in.o_vec.dy}) EXPECT_TRUE(is_on_grid64(v));
    }
  }
}

TEST(Synth, NearNadirRoofEqualsFootprint) {
  SceneConfig cfg = small_config(3);
  cfg.height_min = cfg.height_max = 0.0;
  EXPECT_TRUE(cfg.near_nadir());
  const Scene sc = generate_scene(cfg);
  ASSERT_FALSE(sc.instances.empty());
  for (const auto& in : sc.instances) {
    EXPECT_EQ(in.o_vec, (OffsetVec{0, 0}));
    EXPECT_EQ(in.roof, in.footprint);
  }
  EXPECT_EQ(sc.channels.footprint_evidence, sc.channels.roof_evidence);
}

TEST(Synth, ZeroNuLeavesOsmOnFootprint) {
  SceneConfig cfg = small_config(4);
  cfg.osm_nu = 0.0;
  for (const auto& in : generate_scene(cfg).instances) {
    EXPECT_EQ(in.f_vec.norm(), 0.0);
    EXPECT_EQ(in.osm, in.footprint);
  }
}

TEST(Synth, RoofOffsetsShareAzimuthAndRespectHeightRange) {
  SceneConfig cfg = small_config(5);
  cfg.view_azimuth = 0.75;
  const Scene sc = generate_scene(cfg);
  EXPECT_EQ(sc.azimuth, 0.75);
  for (const auto& in : sc.instances) {
    const double h = in.o_vec.norm();
    EXPECT_GE(h, cfg.height_min - 0.02);
    EXPECT_LE(h, cfg.height_max + 0.02);
    EXPECT_NEAR(std::atan2(in.o_vec.dy, in.o_vec.dx), 0.75, 0.02 / cfg.height_min);
  }
}

TEST(Synth, FootprintsAreRectilinearAndSeparated) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const SceneConfig cfg = small_config(s);
    const Scene sc = generate_scene(cfg);
    EXPECT_EQ(static_cast<int>(sc.instances.size()) + sc.placement_failures, cfg.n_buildings);
    for (std::size_t a = 0; a < sc.instances.size(); ++a) {
      const auto& v = sc.instances[a].footprint.vertices;
      ASSERT_TRUE(v.size() == 4 || v.size() == 6);
      for (std::size_t k = 0; k < v.size(); ++k) {
        const Point2 p = v[k], q = v[(k + 1) % v.size()];
        EXPECT_TRUE(p.x == q.x || p.y == q.y);
        EXPECT_GE(p.x, cfg.border);
        EXPECT_LE(p.x, cfg.width - cfg.border);
      }
      // separated footprints never share a pixel
      for (std::size_t b = a + 1; b < sc.instances.size(); ++b) {
        const RasterMask ma = rasterize(sc.instances[a].footprint, cfg.width, cfg.height);
        const RasterMask mb = rasterize(sc.instances[b].footprint, cfg.width, cfg.height);
        for (std::size_t k = 0; k < ma.bits().size(); ++k) EXPECT_FALSE(ma.bits()[k] && mb.bits()[k]);
      }
    }
  }
}

TEST(Synth, CrowdedSceneCountsPlacementFailures) {
  SceneConfig cfg = small_config(6);
  cfg.n_buildings = 200;
  const Scene sc = generate_scene(cfg);
  EXPECT_GT(sc.placement_failures, 0);
  EXPECT_EQ(static_cast<int>(sc.instances.size()) + sc.placement_failures, 200);
}

TEST(Synth, DeterministicUnderSeed) {
  const Scene a = generate_scene(small_config(9));
  const Scene b = generate_scene(small_config(9));
  const Scene c = generate_scene(small_config(10));
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) EXPECT_EQ(a.instances[i].osm, b.instances[i].osm);
  EXPECT_EQ(a.channels.footprint_evidence, b.channels.footprint_evidence);
  EXPECT_NE(a.instances[0].footprint, c.instances[0].footprint);
}

TEST(Synth, MeanDisplacementIsRayleighMean) {
  // |f| of an isotropic 2-D Gaussian with per-axis std nu has mean nu*sqrt(pi/2).
  double sum = 0;
  int n = 0;
  for (std::uint64_t s = 0; n < 10000; ++s) {
    SceneConfig cfg = small_config(1000 + s);
    cfg.blur_radius = 0;
    for (const auto& in : generate_scene(cfg).instances) {
      sum += in.f_vec.norm();
      ++n;
    }
  }
  const double expected = 20.0 * std::sqrt(std::numbers::pi / 2.0);
  EXPECT_NEAR(sum / n, expected, 0.02 * expected);
}

TEST(RenderChannels, ZeroBlurIsBinaryUnion) {
  SceneConfig cfg = small_config(11);
  cfg.blur_radius = 0;
  const Scene sc = generate_scene(cfg);
  std::vector<Polygon> fps;
  for (const auto& in : sc.instances) fps.push_back(in.footprint);
  const RasterMask u = rasterize_union(fps, cfg.width, cfg.height);
  for (int j = 0; j < cfg.height; ++j)
    for (int i = 0; i < cfg.width; ++i) EXPECT_EQ(sc.channels.footprint_evidence.at(i, j), u.at(i, j));
}

TEST(RenderChannels, InteriorIsOneAndFarFieldIsZero) {
  SceneConfig cfg = small_config(12);
  cfg.blur_radius = 2;
  const Scene sc = generate_scene(cfg);
  std::vector<Polygon> fps;
  for (const auto& in : sc.instances) fps.push_back(in.footprint);
  // Brute-force oracle mask, dilated by the blur radius in the max norm.
  std::vector<std::uint8_t> oracle(static_cast<std::size_t>(cfg.width) * cfg.height, 0);
  for (const auto& p : fps) {
    const auto m = osmalign::testing::brute_force_raster(p, cfg.width, cfg.height);
    for (std::size_t k = 0; k < m.size(); ++k) oracle[k] |= m[k];
  }
  const int r = cfg.blur_radius;
  auto any_within = [&](int i, int j, bool want) {
    for (int v = j - r; v <= j + r; ++v)
      for (int u = i - r; u <= i + r; ++u) {
        const bool set = u >= 0 && v >= 0 && u < cfg.width && v < cfg.height && oracle[v * cfg.width + u];
        if (set == want) return true;
      }
    return false;
  };
  const Channel& ch = sc.channels.footprint_evidence;
  for (int j = 0; j < cfg.height; ++j)
    for (int i = 0; i < cfg.width; ++i) {
      if (!any_within(i, j, true)) EXPECT_EQ(ch.at(i, j), 0.0) << i << "," << j;
      if (!any_within(i, j, false)) EXPECT_EQ(ch.at(i, j), 1.0) << i << "," << j;
      EXPECT_GE(ch.at(i, j), 0.0);
      EXPECT_LE(ch.at(i, j), 1.0);
    }
}

TEST(Snap64, RoundsToGrid) {
  EXPECT_EQ(snap64(0.0), 0.0);
  EXPECT_EQ(snap64(1.0 / 64.0), 1.0 / 64.0);
  EXPECT_EQ(snap64(0.01), 0.015625);
  EXPECT_EQ(snap64(-3.3), -3.296875);
}
