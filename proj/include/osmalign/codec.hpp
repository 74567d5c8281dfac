#pragma once

#include <cmath>

#include "osmalign/error.hpp"

namespace osmalign {

/// A 2-D displacement in pixel units (image convention, y grows downward).
/// Used for the OSM-to-footprint correction, the footprint-to-roof offset
/// and their sum.
struct OffsetVec {
  double dx = 0.0;
  double dy = 0.0;

  double norm() const { return std::hypot(dx, dy); }
  double squared_norm() const { return dx * dx + dy * dy; }
  bool finite() const { return std::isfinite(dx) && std::isfinite(dy); }

  friend OffsetVec operator+(OffsetVec a, OffsetVec b) { return {a.dx + b.dx, a.dy + b.dy}; }
  friend OffsetVec operator-(OffsetVec a, OffsetVec b) { return {a.dx - b.dx, a.dy - b.dy}; }
  friend OffsetVec operator-(OffsetVec a) { return {-a.dx, -a.dy}; }
  friend OffsetVec operator*(double s, OffsetVec a) { return {s * a.dx, s * a.dy}; }
  friend bool operator==(const OffsetVec&, const OffsetVec&) = default;
};

/// Offset composition: footprint correction plus roof offset gives the total
/// OSM-to-roof correction.
inline OffsetVec compose(OffsetVec footprint_offset, OffsetVec roof_offset) {
  return footprint_offset + roof_offset;
}

/// Affine map between pixel-space offsets and the normalized space a
/// regression head works in: encoded = (v - alpha) / beta.
class OffsetCodec {
 public:
  static constexpr double kDefaultBeta = 200.0;

  OffsetCodec() = default;
  OffsetCodec(OffsetVec alpha, double beta) : alpha_(alpha), beta_(beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("codec beta must be positive and finite");
    if (!alpha.finite()) throw InvalidArgument("codec alpha must be finite");
  }

  OffsetVec alpha() const { return alpha_; }
  double beta() const { return beta_; }

  OffsetVec encode(OffsetVec v) const { return {(v.dx - alpha_.dx) / beta_, (v.dy - alpha_.dy) / beta_}; }
  OffsetVec decode(OffsetVec ve) const { return {beta_ * ve.dx + alpha_.dx, beta_ * ve.dy + alpha_.dy}; }

 private:
  OffsetVec alpha_{};
  double beta_ = kDefaultBeta;
};

}  // namespace osmalign
