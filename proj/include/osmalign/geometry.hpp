#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/error.hpp"

namespace osmalign {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(y); }

  friend Point2 operator+(Point2 p, OffsetVec v) { return {p.x + v.dx, p.y + v.dy}; }
  friend OffsetVec operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return (a - b).norm(); }

/// Closed ring of keypoints; the closing edge back to the first vertex is
/// implicit. Self-intersection is allowed (rasterization uses even-odd).
struct Polygon {
  std::vector<Point2> vertices;

  std::size_t size() const { return vertices.size(); }

  bool finite() const {
    return std::all_of(vertices.begin(), vertices.end(), [](Point2 p) { return p.finite(); });
  }
  bool valid() const { return vertices.size() >= 3 && finite(); }

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

inline double signed_area(const Polygon& poly) {
  const auto& v = poly.vertices;
  double twice = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const Point2& a = v[i];
    const Point2& b = v[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

enum class CentroidMode { area, vertex_mean };

inline Point2 vertex_mean(const Polygon& poly) {
  double sx = 0.0, sy = 0.0;
  for (Point2 p : poly.vertices) {
    sx += p.x;
    sy += p.y;
  }
  const double n = static_cast<double>(poly.vertices.size());
  return {sx / n, sy / n};
}

/// Area-weighted centroid. Falls back to the vertex mean when the ring
/// encloses (numerically) no area.
///
/// Coordinates are taken relative to the first vertex so the result does not
/// lose precision for small polygons far from the origin.
inline Point2 centroid(const Polygon& poly, CentroidMode mode = CentroidMode::area) {
  const auto& v = poly.vertices;
  if (v.empty()) throw InvalidArgument("centroid of empty polygon");
  if (mode == CentroidMode::vertex_mean) return vertex_mean(poly);

  const Point2 o = v.front();
  double twice_area = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0, n = v.size(); i < n; ++i) {
    const double ax = v[i].x - o.x, ay = v[i].y - o.y;
    const Point2& b = v[(i + 1) % n];
    const double bx = b.x - o.x, by = b.y - o.y;
    const double cross = ax * by - bx * ay;
    twice_area += cross;
    cx += (ax + bx) * cross;
    cy += (ay + by) * cross;
  }
  if (std::abs(0.5 * twice_area) < 1e-9) return vertex_mean(poly);
  return {o.x + cx / (3.0 * twice_area), o.y + cy / (3.0 * twice_area)};
}

/// Rigid translation of every vertex.
inline Polygon translate(const Polygon& poly, OffsetVec off) {
  Polygon out;
  out.vertices.reserve(poly.vertices.size());
  for (Point2 p : poly.vertices) out.vertices.push_back(p + off);
  return out;
}

// ---------------------------------------------------------------------------
// Padded batches

/// m x l keypoint matrix with a validity mask. Row i holds the n_i vertices of
/// instance i followed by zero padding.
class PolygonBatch {
 public:
  PolygonBatch() = default;
  PolygonBatch(std::size_t count, std::size_t max_vertices)
      : count_(count),
        max_vertices_(max_vertices),
        coords_(count * max_vertices * 2, 0.0),
        validity_(count * max_vertices, 0) {}

  std::size_t count() const { return count_; }
  std::size_t max_vertices() const { return max_vertices_; }

  double& x(std::size_t i, std::size_t k) { return coords_[(i * max_vertices_ + k) * 2]; }
  double& y(std::size_t i, std::size_t k) { return coords_[(i * max_vertices_ + k) * 2 + 1]; }
  double x(std::size_t i, std::size_t k) const { return coords_[(i * max_vertices_ + k) * 2]; }
  double y(std::size_t i, std::size_t k) const { return coords_[(i * max_vertices_ + k) * 2 + 1]; }

  std::uint8_t& valid(std::size_t i, std::size_t k) { return validity_[i * max_vertices_ + k]; }
  std::uint8_t valid(std::size_t i, std::size_t k) const { return validity_[i * max_vertices_ + k]; }

  std::size_t vertex_count(std::size_t i) const {
    std::size_t n = 0;
    while (n < max_vertices_ && valid(i, n)) ++n;
    return n;
  }

  Polygon polygon(std::size_t i) const {
    Polygon p;
    const std::size_t n = vertex_count(i);
    p.vertices.reserve(n);
    for (std::size_t k = 0; k < n; ++k) p.vertices.push_back({x(i, k), y(i, k)});
    return p;
  }

  std::span<const double> coords() const { return coords_; }
  std::span<const std::uint8_t> validity() const { return validity_; }

  friend bool operator==(const PolygonBatch&, const PolygonBatch&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t max_vertices_ = 0;
  std::vector<double> coords_;
  std::vector<std::uint8_t> validity_;
};

inline PolygonBatch pad_batch(std::span<const Polygon> polys) {
  if (polys.empty()) throw InvalidArgument("empty batch");
  std::size_t l = 0;
  for (const auto& p : polys) l = std::max(l, p.size());
  PolygonBatch batch(polys.size(), l);
  for (std::size_t i = 0; i < polys.size(); ++i) {
    const auto& v = polys[i].vertices;
    for (std::size_t k = 0; k < v.size(); ++k) {
      batch.x(i, k) = v[k].x;
      batch.y(i, k) = v[k].y;
      batch.valid(i, k) = 1;
    }
  }
  return batch;
}

inline std::vector<Polygon> unpad(const PolygonBatch& batch) {
  std::vector<Polygon> out;
  out.reserve(batch.count());
  for (std::size_t i = 0; i < batch.count(); ++i) out.push_back(batch.polygon(i));
  return out;
}

/// Hadamard product of the coordinates with the validity mask.
inline PolygonBatch apply_mask(PolygonBatch batch) {
  for (std::size_t i = 0; i < batch.count(); ++i)
    for (std::size_t k = 0; k < batch.max_vertices(); ++k) {
      const double m = batch.valid(i, k);
      batch.x(i, k) *= m;
      batch.y(i, k) *= m;
    }
  return batch;
}

/// Translates instance i rigidly; padded entries stay untouched.
inline void translate_instance(PolygonBatch& batch, std::size_t i, OffsetVec off) {
  for (std::size_t k = 0; k < batch.max_vertices() && batch.valid(i, k); ++k) {
    batch.x(i, k) += off.dx;
    batch.y(i, k) += off.dy;
  }
}

inline std::vector<Point2> centroids(const PolygonBatch& batch, CentroidMode mode = CentroidMode::area) {
  std::vector<Point2> out;
  out.reserve(batch.count());
  for (std::size_t i = 0; i < batch.count(); ++i) out.push_back(centroid(batch.polygon(i), mode));
  return out;
}

// ---------------------------------------------------------------------------
// Rasterization

/// Row-major binary occupancy grid. Pixel (i, j) is column i, row j and covers
/// [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
class RasterMask {
 public:
  RasterMask() = default;
  RasterMask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("raster dimensions must be positive");
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }

  std::uint8_t at(int i, int j) const { return bits_[index(i, j)]; }
  void set(int i, int j, bool on = true) { bits_[index(i, j)] = on ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  std::span<const std::uint8_t> bits() const { return bits_; }

  RasterMask& operator|=(const RasterMask& other) {
    if (other.width_ != width_ || other.height_ != height_) throw InvalidArgument("raster dimension mismatch");
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] |= other.bits_[k];
    return *this;
  }

  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(i);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Horizontal run of set pixels [x_begin, x_end) on one row.
struct Span {
  int row = 0;
  int x_begin = 0;
  int x_end = 0;
};

namespace detail {

// Smallest integer i with i + 0.5 >= a, for a already clamped to a sane range.
inline int first_center_at_or_after(double a) {
  int i = static_cast<int>(std::ceil(a - 0.5));
  while (i + 0.5 < a) ++i;
  while ((i - 1) + 0.5 >= a) --i;
  return i;
}

}  // namespace detail

/// Pixel-center spans of `poly` clipped to a width x height grid, by
/// scanline even-odd fill. A row's center line y crosses edge (a, b) iff
/// exactly one endpoint lies strictly below it, so vertices on the line count
/// once and adjacent polygons never both claim a pixel.
inline std::vector<Span> raster_spans(const Polygon& poly, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("raster dimensions must be positive");
  if (!poly.finite()) throw InvalidArgument("cannot rasterize polygon with non-finite coordinates");
  std::vector<Span> spans;
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return spans;

  double ymin = v[0].y, ymax = v[0].y;
  for (Point2 p : v) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const int row_begin = std::max(0, detail::first_center_at_or_after(std::max(ymin, -1.0)));
  const int row_end = std::min(height, detail::first_center_at_or_after(std::min(ymax, height + 1.0)) + 1);

  std::vector<double> xs;
  for (int row = row_begin; row < row_end; ++row) {
    const double py = row + 0.5;
    xs.clear();
    for (std::size_t a = 0, b = n - 1; a < n; b = a++) {
      const Point2 pa = v[a], pb = v[b];
      if ((pa.y > py) != (pb.y > py)) xs.push_back((pb.x - pa.x) * (py - pa.y) / (pb.y - pa.y) + pa.x);
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // centers with xs[k] <= cx < xs[k+1]
      const double lo = std::clamp(xs[k], -1.0, width + 1.0);
      const double hi = std::clamp(xs[k + 1], -1.0, width + 1.0);
      const int x0 = std::max(0, detail::first_center_at_or_after(lo));
      const int x1 = std::min(width, detail::first_center_at_or_after(hi));
      if (x0 < x1) spans.push_back({row, x0, x1});
    }
  }
  return spans;
}

inline void rasterize_into(RasterMask& mask, const Polygon& poly) {
  for (const Span& s : raster_spans(poly, mask.width(), mask.height()))
    for (int i = s.x_begin; i < s.x_end; ++i) mask.set(i, s.row);
}

inline RasterMask rasterize(const Polygon& poly, int width, int height) {
  RasterMask mask(width, height);
  rasterize_into(mask, poly);
  return mask;
}

inline RasterMask rasterize_union(std::span<const Polygon> polys, int width, int height) {
  RasterMask mask(width, height);
  for (const auto& p : polys) rasterize_into(mask, p);
  return mask;
}

}  // namespace osmalign
