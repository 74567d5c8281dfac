#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/geometry.hpp"

namespace osmalign {

struct PixelConfusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  PixelConfusion& operator+=(const PixelConfusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const PixelConfusion&, const PixelConfusion&) = default;
};

struct MaskScores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double iou = 0.0;
};

inline PixelConfusion confusion(const RasterMask& pred, const RasterMask& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height())
    throw InvalidArgument("confusion: mask dimension mismatch");
  PixelConfusion c;
  const auto p = pred.bits(), g = gt.bits();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] && g[k]) ++c.tp;
    else if (p[k]) ++c.fp;
    else if (g[k]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Precision, recall, F1 and IoU. Empty prediction against empty ground
/// truth counts as a perfect match; any other zero denominator scores 0.
inline MaskScores scores(const PixelConfusion& c) {
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0, 1.0};
  MaskScores s;
  s.precision = c.tp + c.fp ? tp / (tp + fp) : 0.0;
  s.recall = c.tp + c.fn ? tp / (tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.iou = tp / (tp + fp + fn);
  return s;
}

/// Endpoint error: distance between polygon centroids.
inline double epe(const Polygon& pred, const Polygon& gt, CentroidMode mode = CentroidMode::area) {
  return distance(centroid(pred, mode), centroid(gt, mode));
}

/// Length error of a roof offset: | |o| - |o_hat| |.
inline double le(OffsetVec pred_o, OffsetVec gt_o) { return std::abs(gt_o.norm() - pred_o.norm()); }

struct InstanceErrors {
  double epe_footprint = 0.0;
  double epe_roof = 0.0;
  double le = 0.0;
};

struct ImageConfusion {
  PixelConfusion roof;
  PixelConfusion footprint;
};

struct Report {
  MaskScores roof;
  MaskScores footprint;
  double mf = 0.0;
  double mi = 0.0;
  double mean_epe_roof = 0.0;
  double mean_epe_footprint = 0.0;
  double ale = 0.0;
  std::size_t instances = 0;
};

/// Pools pixel counts over all images before scoring (micro aggregation);
/// EPE and aLE are unweighted instance means.
inline Report aggregate(std::span<const InstanceErrors> per_instance, std::span<const ImageConfusion> per_image) {
  PixelConfusion roof, fp;
  for (const auto& c : per_image) {
    roof += c.roof;
    fp += c.footprint;
  }
  Report r;
  r.roof = scores(roof);
  r.footprint = scores(fp);
  r.mf = 0.5 * (r.roof.f1 + r.footprint.f1);
  r.mi = 0.5 * (r.roof.iou + r.footprint.iou);
  r.instances = per_instance.size();
  if (!per_instance.empty()) {
    for (const auto& e : per_instance) {
      r.mean_epe_footprint += e.epe_footprint;
      r.mean_epe_roof += e.epe_roof;
      r.ale += e.le;
    }
    const double n = static_cast<double>(per_instance.size());
    r.mean_epe_footprint /= n;
    r.mean_epe_roof /= n;
    r.ale /= n;
  }
  return r;
}

}  // namespace osmalign
