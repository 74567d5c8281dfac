#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/random.hpp"

namespace osmalign {

/// Real-valued raster layer, row-major, values in [0, 1].
class Channel {
 public:
  Channel() = default;
  Channel(int width, int height, double fill = 0.0) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("channel dimensions must be positive");
    values_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double& at(int i, int j) { return values_[index(i, j)]; }
  double at(int i, int j) const { return values_[index(i, j)]; }
  const std::vector<double>& values() const { return values_; }

  /// 8-bit level used on disk and by the correlation search: round(255 * v).
  int level(int i, int j) const { return static_cast<int>(std::lround(255.0 * at(i, j))); }

  friend bool operator==(const Channel&, const Channel&) = default;

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(i);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

enum class ChannelKind { footprint_evidence, roof_evidence };

inline const char* to_string(ChannelKind k) {
  return k == ChannelKind::footprint_evidence ? "footprint_evidence" : "roof_evidence";
}

struct InstanceTruth {
  Point2 footprint;  // ground-truth footprint centroid
  Point2 roof;       // ground-truth roof centroid
};

/// Everything a predictor may look at for one image. `hidden_truth` exists
/// only for the oracle; the correlation predictor never reads it.
struct PredictorContext {
  Channel footprint_evidence;
  Channel roof_evidence;
  std::optional<std::vector<InstanceTruth>> hidden_truth;

  const Channel& channel(ChannelKind k) const {
    return k == ChannelKind::footprint_evidence ? footprint_evidence : roof_evidence;
  }
};

enum PredictionFlag : std::uint8_t {
  kFlagNone = 0,
  kFlagFailed = 1,          // no usable evidence (e.g. polygon fully outside the image)
  kFlagWindowBoundary = 2,  // best match sits on the edge of the search window
};

struct OffsetPrediction {
  std::vector<OffsetVec> offsets;
  std::vector<double> scores;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return offsets.size(); }
  bool failed(std::size_t i) const { return (flags[i] & kFlagFailed) != 0; }
};

/// Stand-in for the learned offset regressor. A footprint query moves a
/// polygon toward the building footprint; a roof query predicts the
/// footprint-to-roof offset from a footprint-aligned polygon.
class OffsetPredictor {
 public:
  virtual ~OffsetPredictor() = default;

  /// `step_index` identifies the denoising step (and TTA run) so stochastic
  /// predictors can key their randomness on it.
  virtual OffsetPrediction predict_footprint(const PredictorContext& ctx, const PolygonBatch& batch,
                                             std::uint64_t step_index) const = 0;
  virtual OffsetPrediction predict_roof(const PredictorContext& ctx, const PolygonBatch& batch) const = 0;
};

// ---------------------------------------------------------------------------
// Oracle

struct OraclePredictorParams {
  double kappa = 1.0;  // contraction toward truth, in [0, 1]
  double rho = 0.0;    // isotropic prediction noise std, px
  std::uint64_t seed = 0;

  void validate() const {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw InvalidArgument("oracle kappa must lie in [0, 1]");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidArgument("oracle rho must be finite and non-negative");
  }
};

namespace detail {

constexpr std::uint64_t kRoofStep = std::numeric_limits<std::uint64_t>::max();

inline OffsetPrediction oracle_toward(const PolygonBatch& batch, const std::vector<InstanceTruth>& truth, bool roof,
                                      const OraclePredictorParams& params, std::uint64_t step_index) {
  params.validate();
  if (truth.size() != batch.count()) throw InvalidArgument("hidden truth does not match batch size");
  OffsetPrediction out;
  out.offsets.reserve(batch.count());
  out.scores.assign(batch.count(), 1.0);
  out.flags.assign(batch.count(), kFlagNone);
  for (std::size_t i = 0; i < batch.count(); ++i) {
    const Point2 current = centroid(batch.polygon(i));
    const Point2 target = roof ? truth[i].roof : truth[i].footprint;
    OffsetVec off = params.kappa * (target - current);
    if (params.rho > 0.0) {
      Rng rng(stream_key(params.seed, {step_index, i, roof ? 1u : 0u}));
      const double ex = params.rho * rng.normal();
      const double ey = params.rho * rng.normal();
      off = off + OffsetVec{ex, ey};
    }
    out.offsets.push_back(off);
  }
  return out;
}

}  // namespace detail

/// offset = kappa * (truth - current centroid) + eta, eta ~ N(0, rho^2 I),
/// with eta keyed on (seed, step_index, instance).
inline OffsetPrediction oracle_predict(const PredictorContext& ctx, const PolygonBatch& batch,
                                       const OraclePredictorParams& params, std::uint64_t step_index) {
  if (!ctx.hidden_truth) throw InvalidArgument("oracle requires ground truth");
  return detail::oracle_toward(batch, *ctx.hidden_truth, false, params, step_index);
}

class OraclePredictor final : public OffsetPredictor {
 public:
  explicit OraclePredictor(OraclePredictorParams params) : params_(params) { params_.validate(); }

  OffsetPrediction predict_footprint(const PredictorContext& ctx, const PolygonBatch& batch,
                                     std::uint64_t step_index) const override {
    return oracle_predict(ctx, batch, params_, step_index);
  }

  OffsetPrediction predict_roof(const PredictorContext& ctx, const PolygonBatch& batch) const override {
    if (!ctx.hidden_truth) throw InvalidArgument("oracle requires ground truth");
    return detail::oracle_toward(batch, *ctx.hidden_truth, true, params_, detail::kRoofStep);
  }

  const OraclePredictorParams& params() const { return params_; }

 private:
  OraclePredictorParams params_;
};

// ---------------------------------------------------------------------------
// Correlation matcher

enum class CorrelationScore { overlap_sum, normalized_overlap };

struct CorrelationParams {
  int search_radius = 32;
  ChannelKind target_channel = ChannelKind::footprint_evidence;
  CorrelationScore score = CorrelationScore::normalized_overlap;

  void validate() const {
    if (search_radius < 1) throw InvalidArgument("search radius must be at least 1");
  }
};

namespace detail {

// Per-row prefix sums of the 8-bit channel levels, with one leading zero.
class RowPrefix {
 public:
  explicit RowPrefix(const Channel& ch) : width_(ch.width()), height_(ch.height()) {
    sums_.assign(static_cast<std::size_t>(width_ + 1) * static_cast<std::size_t>(height_), 0);
    for (int j = 0; j < height_; ++j) {
      std::int64_t* row = &sums_[static_cast<std::size_t>(j) * static_cast<std::size_t>(width_ + 1)];
      for (int i = 0; i < width_; ++i) row[i + 1] = row[i] + ch.level(i, j);
    }
  }

  // Sum of levels over columns [x0, x1) of row j; zero outside the image.
  std::int64_t run(int j, int x0, int x1) const {
    if (j < 0 || j >= height_) return 0;
    x0 = std::clamp(x0, 0, width_);
    x1 = std::clamp(x1, 0, width_);
    if (x1 <= x0) return 0;
    const std::int64_t* row = &sums_[static_cast<std::size_t>(j) * static_cast<std::size_t>(width_ + 1)];
    return row[x1] - row[x0];
  }

 private:
  int width_;
  int height_;
  std::vector<std::int64_t> sums_;
};

inline bool better_shift(std::int64_t s, int du, int dv, std::int64_t best_s, int best_du, int best_dv) {
  if (s != best_s) return s > best_s;
  const int n = du * du + dv * dv, best_n = best_du * best_du + best_dv * best_dv;
  if (n != best_n) return n < best_n;
  return std::pair(du, dv) < std::pair(best_du, best_dv);
}

}  // namespace detail

/// Exhaustive integer template match. For each instance, rasterizes the
/// polygon into a stencil and finds the shift (du, dv) in [-W, W]^2 that
/// maximizes the stencil's overlap with the target channel. Ties go to the
/// smallest shift norm, then to the lexicographically smallest (du, dv).
///
/// Scores are accumulated on the channel's 8-bit levels so ties are exact.
inline OffsetPrediction correlate_predict(const PredictorContext& ctx, const PolygonBatch& batch,
                                          const CorrelationParams& params) {
  params.validate();
  const Channel& ch = ctx.channel(params.target_channel);
  if (ch.width() <= 0) throw InvalidArgument(std::string("missing channel ") + to_string(params.target_channel));
  const detail::RowPrefix prefix(ch);
  const int w = params.search_radius;

  OffsetPrediction out;
  out.offsets.reserve(batch.count());
  out.scores.reserve(batch.count());
  out.flags.reserve(batch.count());
  for (std::size_t i = 0; i < batch.count(); ++i) {
    const auto spans = raster_spans(batch.polygon(i), ch.width(), ch.height());
    std::int64_t area = 0;
    for (const Span& s : spans) area += s.x_end - s.x_begin;
    if (area == 0) {
      out.offsets.push_back({});
      out.scores.push_back(0.0);
      out.flags.push_back(kFlagFailed);
      continue;
    }

    std::int64_t best_s = -1;
    int best_du = 0, best_dv = 0;
    for (int dv = -w; dv <= w; ++dv)
      for (int du = -w; du <= w; ++du) {
        std::int64_t s = 0;
        for (const Span& sp : spans) s += prefix.run(sp.row + dv, sp.x_begin + du, sp.x_end + du);
        if (detail::better_shift(s, du, dv, best_s, best_du, best_dv)) {
          best_s = s;
          best_du = du;
          best_dv = dv;
        }
      }

    double score = static_cast<double>(best_s) / 255.0;
    if (params.score == CorrelationScore::normalized_overlap) score /= static_cast<double>(area);
    out.offsets.push_back({static_cast<double>(best_du), static_cast<double>(best_dv)});
    out.scores.push_back(score);
    out.flags.push_back((std::abs(best_du) == w || std::abs(best_dv) == w) ? kFlagWindowBoundary : kFlagNone);
  }
  return out;
}

/// Footprint queries search the footprint channel; roof queries search the
/// roof channel, usually with a wider window since roof offsets scale with
/// building height.
class CorrelationPredictor final : public OffsetPredictor {
 public:
  CorrelationPredictor(CorrelationParams footprint, CorrelationParams roof)
      : footprint_(footprint), roof_(roof) {
    footprint_.validate();
    roof_.validate();
  }

  OffsetPrediction predict_footprint(const PredictorContext& ctx, const PolygonBatch& batch,
                                     std::uint64_t) const override {
    return correlate_predict(ctx, batch, footprint_);
  }

  OffsetPrediction predict_roof(const PredictorContext& ctx, const PolygonBatch& batch) const override {
    return correlate_predict(ctx, batch, roof_);
  }

 private:
  CorrelationParams footprint_;
  CorrelationParams roof_;
};

// ---------------------------------------------------------------------------
// Loss diagnostics

/// Smooth-L1 summed over both components, transition at |e| = 1.
inline double smooth_l1(OffsetVec pred, OffsetVec target) {
  auto term = [](double e) {
    const double a = std::abs(e);
    return a < 1.0 ? 0.5 * e * e : a - 0.5;
  };
  return term(pred.dx - target.dx) + term(pred.dy - target.dy);
}

/// gamma * (L_footprint + L_roof_offset). Inputs are expected in encoded
/// (codec) space.
inline double alignment_loss(OffsetVec pred_f, OffsetVec target_f, OffsetVec pred_o, OffsetVec target_o,
                             double gamma = 0.1) {
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be non-negative");
  return gamma * (smooth_l1(pred_f, target_f) + smooth_l1(pred_o, target_o));
}

}  // namespace osmalign
