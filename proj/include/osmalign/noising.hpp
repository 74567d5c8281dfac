#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/random.hpp"

namespace osmalign {

enum class NoiseMode { rigid, per_keypoint };

struct NoiseConfig {
  double sigma = 20.0;  // px
  NoiseMode mode = NoiseMode::rigid;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(sigma) || sigma < 0.0) throw InvalidArgument("noise sigma must be finite and non-negative");
  }
};

/// Per-keypoint noise offsets with the same m x l layout as the batch it was
/// drawn for. Padded positions hold zeros and are ignored downstream.
struct NoiseField {
  std::size_t count = 0;
  std::size_t max_vertices = 0;
  std::vector<OffsetVec> offsets;

  OffsetVec at(std::size_t i, std::size_t k) const { return offsets[i * max_vertices + k]; }
};

/// Draws the noise field. Each instance has its own stream keyed by
/// (seed, instance index), so the field does not depend on draw order.
inline NoiseField sample_noise(const PolygonBatch& batch, const NoiseConfig& cfg) {
  cfg.validate();
  NoiseField field{batch.count(), batch.max_vertices(),
                   std::vector<OffsetVec>(batch.count() * batch.max_vertices())};
  for (std::size_t i = 0; i < batch.count(); ++i) {
    Rng rng(stream_key(cfg.seed, {i}));
    const std::size_t n = batch.vertex_count(i);
    if (cfg.mode == NoiseMode::rigid) {
      const double dx = cfg.sigma * rng.normal();
      const double dy = cfg.sigma * rng.normal();
      for (std::size_t k = 0; k < n; ++k) field.offsets[i * field.max_vertices + k] = {dx, dy};
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        const double dx = cfg.sigma * rng.normal();
        const double dy = cfg.sigma * rng.normal();
        field.offsets[i * field.max_vertices + k] = {dx, dy};
      }
    }
  }
  return field;
}

struct NoisyBatch {
  PolygonBatch noisy;
  /// Offset that moves each noisy polygon back onto its footprint: the rigid
  /// noise value, or the keypoint mean in per-keypoint mode.
  std::vector<OffsetVec> recovery;
};

/// noisy = (footprints - N) masked by validity.
inline NoisyBatch inject(const PolygonBatch& footprints, const NoiseField& field) {
  if (field.count != footprints.count() || field.max_vertices != footprints.max_vertices() ||
      field.offsets.size() != footprints.count() * footprints.max_vertices())
    throw InvalidArgument("noise field shape does not match batch");

  NoisyBatch out{footprints, {}};
  out.recovery.reserve(footprints.count());
  for (std::size_t i = 0; i < footprints.count(); ++i) {
    OffsetVec sum{};
    std::size_t n = 0;
    for (std::size_t k = 0; k < footprints.max_vertices(); ++k) {
      const double m = footprints.valid(i, k);
      const OffsetVec nk = field.at(i, k);
      out.noisy.x(i, k) = (footprints.x(i, k) - nk.dx) * m;
      out.noisy.y(i, k) = (footprints.y(i, k) - nk.dy) * m;
      if (footprints.valid(i, k)) {
        sum = sum + nk;
        ++n;
      }
    }
    out.recovery.push_back(n ? OffsetVec{sum.dx / n, sum.dy / n} : OffsetVec{});
  }
  return out;
}

/// Uniform sample of m_prime instances without replacement (partial
/// Fisher-Yates), deterministic under seed.
inline std::vector<std::size_t> subsample_indices(std::size_t count, std::size_t m_prime, std::uint64_t seed) {
  if (m_prime < 1 || m_prime > count) throw InvalidArgument("subsample size out of range");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(stream_key(seed, {0x5ab5a3b1eULL}));
  for (std::size_t k = 0; k < m_prime; ++k) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k), static_cast<std::int64_t>(count - 1)));
    std::swap(idx[k], idx[j]);
  }
  idx.resize(m_prime);
  return idx;
}

inline PolygonBatch subsample(const PolygonBatch& batch, std::size_t m_prime, std::uint64_t seed) {
  const auto idx = subsample_indices(batch.count(), m_prime, seed);
  std::vector<Polygon> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(batch.polygon(i));
  return pad_batch(picked);
}

}  // namespace osmalign
