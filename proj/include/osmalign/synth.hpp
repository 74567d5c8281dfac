#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/predictor.hpp"
#include "osmalign/random.hpp"

namespace osmalign {

/// Generator settings for one synthetic off-nadir scene.
struct SceneConfig {
  int width = 512;
  int height = 512;
  int n_buildings = 8;
  int size_min = 16;  // footprint side lengths, px
  int size_max = 48;
  double height_min = 20.0;  // roof offset magnitude, px (0 = near-nadir)
  double height_max = 60.0;
  std::optional<double> view_azimuth;  // radians; drawn per image when unset
  double osm_nu = 20.0;                // std of the rigid OSM misplacement, px
  int blur_radius = 1;
  int min_gap = 4;   // px between footprint bounding boxes
  int border = 8;    // px between footprints and the image edge
  int max_attempts = 200;  // placement retries per building
  std::uint64_t seed = 7;

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidArgument("scene dimensions must be positive");
    if (n_buildings < 0) throw InvalidArgument("building count must be non-negative");
    if (size_min < 3 || size_max < size_min) throw InvalidArgument("size range must satisfy 3 <= min <= max");
    if (2 * border + size_max > std::min(width, height)) throw InvalidArgument("buildings do not fit the image");
    if (!(height_min >= 0.0) || height_max < height_min) throw InvalidArgument("height range must satisfy 0 <= min <= max");
    if (!(osm_nu >= 0.0) || !std::isfinite(osm_nu)) throw InvalidArgument("osm nu must be finite and non-negative");
    if (blur_radius < 0 || min_gap < 0 || border < 0 || max_attempts < 1) throw InvalidArgument("invalid scene config");
  }

  bool near_nadir() const { return height_max == 0.0; }
};

/// One building: OSM label p, footprint f, roof r and the offsets linking
/// them (f = p + f_vec, r = f + o_vec, r_vec = f_vec + o_vec).
struct SceneInstance {
  Polygon osm;
  Polygon footprint;
  Polygon roof;
  OffsetVec f_vec;
  OffsetVec o_vec;
  OffsetVec r_vec;
};

struct SceneChannels {
  Channel footprint_evidence;
  Channel roof_evidence;
};

struct Scene {
  SceneChannels channels;
  std::vector<SceneInstance> instances;
  double azimuth = 0.0;
  int placement_failures = 0;
};

/// Synthetic geometry lives on a 1/64 px grid: sums and differences stay
/// exact and every value prints exactly with six decimals.
inline double snap64(double v) { return std::round(v * 64.0) / 64.0; }

namespace detail {

struct Box {
  int x0, y0, x1, y1;  // [x0, x1) x [y0, y1)
  bool overlaps(const Box& o, int gap) const {
    return x0 < o.x1 + gap && o.x0 < x1 + gap && y0 < o.y1 + gap && o.y0 < y1 + gap;
  }
};

// Axis-aligned rectangle, or an L-shape obtained by cutting a corner notch.
inline Polygon rectilinear_shape(Rng& rng, const Box& b) {
  const double x0 = b.x0, y0 = b.y0, x1 = b.x1, y1 = b.y1;
  const int w = b.x1 - b.x0, h = b.y1 - b.y0;
  if (rng.uniform() < 0.5) return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};

  const double nw = static_cast<double>(rng.uniform_int(std::max(1, w / 3), std::max(1, 2 * w / 3)));
  const double nh = static_cast<double>(rng.uniform_int(std::max(1, h / 3), std::max(1, 2 * h / 3)));
  switch (rng.uniform_int(0, 3)) {
    case 0:  // top-left notch
      return Polygon{{{x0 + nw, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0 + nh}, {x0 + nw, y0 + nh}}};
    case 1:  // top-right
      return Polygon{{{x0, y0}, {x1 - nw, y0}, {x1 - nw, y0 + nh}, {x1, y0 + nh}, {x1, y1}, {x0, y1}}};
    case 2:  // bottom-right
      return Polygon{{{x0, y0}, {x1, y0}, {x1, y1 - nh}, {x1 - nw, y1 - nh}, {x1 - nw, y1}, {x0, y1}}};
    default:  // bottom-left
      return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0 + nw, y1}, {x0 + nw, y1 - nh}, {x0, y1 - nh}}};
  }
}

// Union raster convolved with a normalized (2r+1)^2 box, zero outside.
inline Channel box_blurred(const RasterMask& mask, int radius) {
  const int w = mask.width(), h = mask.height();
  Channel out(w, h);
  if (radius == 0) {
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) out.at(i, j) = mask.at(i, j);
    return out;
  }
  // summed-area table with a zero border row/column
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * static_cast<std::size_t>(h + 1), 0);
  auto S = [&](int i, int j) -> std::int64_t& { return sat[static_cast<std::size_t>(j) * (w + 1) + i]; };
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) S(i + 1, j + 1) = mask.at(i, j) + S(i, j + 1) + S(i + 1, j) - S(i, j);
  const double norm = 1.0 / static_cast<double>((2 * radius + 1) * (2 * radius + 1));
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      const int xa = std::max(0, i - radius), xb = std::min(w, i + radius + 1);
      const int ya = std::max(0, j - radius), yb = std::min(h, j + radius + 1);
      const std::int64_t s = S(xb, yb) - S(xa, yb) - S(xb, ya) + S(xa, ya);
      out.at(i, j) = std::clamp(static_cast<double>(s) * norm, 0.0, 1.0);
    }
  return out;
}

}  // namespace detail

/// Renders footprint and roof evidence: union masks box-blurred by
/// cfg.blur_radius. Geometry outside the image is clipped.
inline SceneChannels render_channels(const std::vector<SceneInstance>& instances, const SceneConfig& cfg) {
  RasterMask fp(cfg.width, cfg.height), roof(cfg.width, cfg.height);
  for (const auto& inst : instances) {
    rasterize_into(fp, inst.footprint);
    rasterize_into(roof, inst.roof);
  }
  return {detail::box_blurred(fp, cfg.blur_radius), detail::box_blurred(roof, cfg.blur_radius)};
}

/// Samples a scene: non-overlapping rectilinear footprints, roofs displaced
/// along a shared view azimuth by a per-building height, and OSM labels
/// displaced from the footprint by a rigid N(0, nu^2 I) draw.
///
/// Buildings that cannot be placed within max_attempts are skipped and
/// counted in placement_failures.
inline Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Scene scene;
  Rng layout(stream_key(cfg.seed, {0}));
  scene.azimuth = cfg.view_azimuth ? *cfg.view_azimuth : layout.uniform(0.0, 2.0 * std::numbers::pi);

  std::vector<detail::Box> placed;
  for (int k = 0; k < cfg.n_buildings; ++k) {
    std::optional<detail::Box> box;
    for (int attempt = 0; attempt < cfg.max_attempts && !box; ++attempt) {
      const int w = static_cast<int>(layout.uniform_int(cfg.size_min, cfg.size_max));
      const int h = static_cast<int>(layout.uniform_int(cfg.size_min, cfg.size_max));
      const int x0 = static_cast<int>(layout.uniform_int(cfg.border, cfg.width - cfg.border - w));
      const int y0 = static_cast<int>(layout.uniform_int(cfg.border, cfg.height - cfg.border - h));
      const detail::Box cand{x0, y0, x0 + w, y0 + h};
      if (std::none_of(placed.begin(), placed.end(), [&](const detail::Box& b) { return b.overlaps(cand, cfg.min_gap); }))
        box = cand;
    }
    if (!box) {
      ++scene.placement_failures;
      continue;
    }
    placed.push_back(*box);

    SceneInstance inst;
    inst.footprint = detail::rectilinear_shape(layout, *box);
    const double hgt = layout.uniform(cfg.height_min, cfg.height_max);
    inst.o_vec = {snap64(hgt * std::cos(scene.azimuth)), snap64(hgt * std::sin(scene.azimuth))};

    Rng noise(stream_key(cfg.seed, {1, static_cast<std::uint64_t>(k)}));
    const double nx = noise.normal(), ny = noise.normal();
    inst.f_vec = {snap64(cfg.osm_nu * nx), snap64(cfg.osm_nu * ny)};
    inst.r_vec = compose(inst.f_vec, inst.o_vec);
    inst.osm = translate(inst.footprint, -inst.f_vec);
    inst.roof = translate(inst.footprint, inst.o_vec);
    scene.instances.push_back(std::move(inst));
  }
  scene.channels = render_channels(scene.instances, cfg);
  return scene;
}

}  // namespace osmalign
