#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/predictor.hpp"
#include "osmalign/random.hpp"

namespace osmalign {

/// Step weights a_t = delta^(t-1), t = 1..steps.
struct Schedule {
  double delta = 1.0;
  int steps = 5;

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("schedule delta must be positive and finite");
    if (steps < 1) throw InvalidArgument("schedule needs at least one step");
    if (!std::isfinite(weight(steps))) throw InvalidArgument("schedule weights overflow");
  }

  double weight(int t) const { return t == 1 ? 1.0 : std::pow(delta, t - 1); }

  Schedule extended(int extra) const { return {delta, steps + extra}; }
};

/// Total schedule weight sum_{t=1..T} delta^(t-1).
inline double energy(double delta, int steps) {
  Schedule{delta, steps}.validate();
  if (delta == 1.0) return static_cast<double>(steps);
  return (1.0 - std::pow(delta, steps)) / (1.0 - delta);
}

/// Compact record of one denoising run. Positions are never accumulated in
/// place: P_t = P_0 + D_t with D_t = D_{t-1} + a_t * raw_t summed in step
/// order, so the final batch is exactly the initial one plus the weighted
/// offset sum.
struct Trajectory {
  PolygonBatch initial;
  std::vector<double> weights;                         // a_1..a_T
  std::vector<std::vector<OffsetVec>> raw_offsets;     // [t-1][instance]
  std::vector<std::vector<OffsetVec>> displacements;   // [t][instance], t = 0..T
  std::vector<std::vector<Point2>> centroids;          // [t][instance], t = 0..T
  std::vector<std::uint8_t> flags;                     // OR of predictor flags per instance
  std::vector<bool> frozen;

  std::size_t steps() const { return weights.size(); }
  std::size_t count() const { return centroids.empty() ? initial.count() : centroids.front().size(); }

  PolygonBatch position(std::size_t t) const {
    PolygonBatch out = initial;
    for (std::size_t i = 0; i < out.count(); ++i) translate_instance(out, i, displacements.at(t)[i]);
    return out;
  }

  const std::vector<OffsetVec>& final_displacement() const { return displacements.back(); }
};

struct DenoiseResult {
  PolygonBatch footprints;
  Trajectory trajectory;
};

/// Iterative footprint correction: P_t = P_{t-1} + a_t * q(P_{t-1}).
///
/// An instance whose prediction fails is flagged and frozen at its current
/// position; its raw offsets are recorded as zero from then on.
/// `step_base` offsets the step index handed to the predictor (TTA runs use it
/// to draw fresh predictor noise).
inline DenoiseResult denoise_footprint(const PredictorContext& ctx, const PolygonBatch& batch,
                                       const OffsetPredictor& predictor, const Schedule& schedule,
                                       std::uint64_t step_base = 0) {
  schedule.validate();
  const std::size_t m = batch.count();
  Trajectory tr;
  tr.initial = batch;
  tr.flags.assign(m, kFlagNone);
  tr.frozen.assign(m, false);
  tr.displacements.emplace_back(m, OffsetVec{});
  tr.centroids.push_back(centroids(batch));

  PolygonBatch current = batch;
  for (int t = 1; t <= schedule.steps; ++t) {
    const double a = schedule.weight(t);
    const OffsetPrediction pred = predictor.predict_footprint(ctx, current, step_base + static_cast<std::uint64_t>(t));
    if (pred.size() != m) throw InvalidArgument("predictor returned wrong number of offsets");

    std::vector<OffsetVec> raw(m);
    std::vector<OffsetVec> disp = tr.displacements.back();
    for (std::size_t i = 0; i < m; ++i) {
      tr.flags[i] |= pred.flags[i];
      if (pred.failed(i) || !pred.offsets[i].finite()) {
        tr.flags[i] |= kFlagFailed;
        tr.frozen[i] = true;
      }
      if (tr.frozen[i]) continue;
      raw[i] = pred.offsets[i];
      disp[i] = disp[i] + a * raw[i];
    }
    tr.weights.push_back(a);
    tr.raw_offsets.push_back(std::move(raw));
    tr.displacements.push_back(std::move(disp));
    current = tr.position(static_cast<std::size_t>(t));
    tr.centroids.push_back(centroids(current));
  }
  return {std::move(current), std::move(tr)};
}

struct RoofLift {
  PolygonBatch roofs;
  std::vector<OffsetVec> offsets;  // predicted footprint-to-roof offset
  std::vector<double> heights;     // relative height proxy, |offset|
  std::vector<std::uint8_t> flags;
};

/// One-step footprint-to-roof lift: R = F + q(F). A failed instance keeps
/// its footprint position with a zero offset.
inline RoofLift lift_to_roof(const PredictorContext& ctx, const PolygonBatch& footprints,
                             const OffsetPredictor& predictor) {
  if (!std::all_of(footprints.coords().begin(), footprints.coords().end(), [](double v) { return std::isfinite(v); }))
    throw InvalidArgument("footprints must be finite");
  const OffsetPrediction pred = predictor.predict_roof(ctx, footprints);
  if (pred.size() != footprints.count()) throw InvalidArgument("predictor returned wrong number of offsets");
  RoofLift out{footprints, {}, {}, pred.flags};
  for (std::size_t i = 0; i < footprints.count(); ++i) {
    OffsetVec o = pred.offsets[i];
    if (pred.failed(i) || !o.finite()) {
      o = {};
      out.flags[i] |= kFlagFailed;
    }
    translate_instance(out.roofs, i, o);
    out.offsets.push_back(o);
    out.heights.push_back(o.norm());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Test-time augmentation

enum class TtaStrategy { none, t1, t1_5 };

struct TTAConfig {
  TtaStrategy strategy = TtaStrategy::none;
  int runs = 4;               // t1
  int extra_steps = 5;        // t1.5
  double perturb_sigma = 5.0; // t1, px
  std::uint64_t seed = 0;

  void validate() const {
    if (strategy == TtaStrategy::t1) {
      if (runs < 1) throw InvalidArgument("t1 needs runs >= 1");
      if (!(perturb_sigma >= 0.0) || !std::isfinite(perturb_sigma)) throw InvalidArgument("t1 perturb sigma must be >= 0");
    }
    if (strategy == TtaStrategy::t1_5 && extra_steps < 1) throw InvalidArgument("t1.5 needs extra_steps >= 1");
  }
};

struct TtaResult {
  PolygonBatch footprints;
  /// Per-instance correction relative to the input batch.
  std::vector<OffsetVec> displacement;
  std::vector<std::uint8_t> flags;
  std::vector<Trajectory> runs;
};

namespace detail {

inline OffsetVec mean_of(std::span<const OffsetVec> v) {
  OffsetVec s{};
  for (OffsetVec x : v) s = s + x;
  const double n = static_cast<double>(v.size());
  return {s.dx / n, s.dy / n};
}

inline PolygonBatch displaced(const PolygonBatch& batch, const std::vector<OffsetVec>& disp) {
  PolygonBatch out = batch;
  for (std::size_t i = 0; i < out.count(); ++i) translate_instance(out, i, disp[i]);
  return out;
}

}  // namespace detail

/// Multi-run averaging. Run 1 starts from the input; every later run starts
/// from the previous endpoint plus a rigid N(0, perturb_sigma^2 I) kick. The
/// output is the per-instance mean of the run endpoints.
inline TtaResult tta_t1(const PredictorContext& ctx, const PolygonBatch& batch, const OffsetPredictor& predictor,
                        const Schedule& schedule, const TTAConfig& cfg) {
  cfg.validate();
  schedule.validate();
  const std::size_t m = batch.count();
  TtaResult out;
  out.flags.assign(m, kFlagNone);

  std::vector<std::vector<OffsetVec>> endpoints;  // [run][instance], relative to input
  std::vector<OffsetVec> start(m, OffsetVec{});
  for (int r = 0; r < cfg.runs; ++r) {
    if (r > 0) {
      start = endpoints.back();
      for (std::size_t i = 0; i < m; ++i) {
        Rng rng(stream_key(cfg.seed, {static_cast<std::uint64_t>(r), i}));
        const double ex = cfg.perturb_sigma * rng.normal();
        const double ey = cfg.perturb_sigma * rng.normal();
        start[i] = start[i] + OffsetVec{ex, ey};
      }
    }
    const auto step_base = static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(schedule.steps);
    DenoiseResult res = denoise_footprint(ctx, detail::displaced(batch, start), predictor, schedule, step_base);
    std::vector<OffsetVec> end(m);
    for (std::size_t i = 0; i < m; ++i) {
      end[i] = start[i] + res.trajectory.final_displacement()[i];
      out.flags[i] |= res.trajectory.flags[i];
    }
    endpoints.push_back(std::move(end));
    out.runs.push_back(std::move(res.trajectory));
  }

  out.displacement.resize(m);
  std::vector<OffsetVec> column(static_cast<std::size_t>(cfg.runs));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < endpoints.size(); ++r) column[r] = endpoints[r][i];
    out.displacement[i] = detail::mean_of(column);
  }
  out.footprints = detail::displaced(batch, out.displacement);
  return out;
}

/// Post-convergence averaging: run T + extra_steps steps with the schedule
/// continued, and average the positions at steps T+1 .. T+extra_steps.
inline TtaResult tta_t15(const PredictorContext& ctx, const PolygonBatch& batch, const OffsetPredictor& predictor,
                         const Schedule& schedule, const TTAConfig& cfg) {
  cfg.validate();
  schedule.validate();
  const std::size_t m = batch.count();
  DenoiseResult res = denoise_footprint(ctx, batch, predictor, schedule.extended(cfg.extra_steps));
  const auto& d = res.trajectory.displacements;

  TtaResult out;
  out.displacement.resize(m);
  std::vector<OffsetVec> column;
  for (std::size_t i = 0; i < m; ++i) {
    column.clear();
    for (std::size_t t = static_cast<std::size_t>(schedule.steps) + 1; t < d.size(); ++t) column.push_back(d[t][i]);
    out.displacement[i] = detail::mean_of(column);
  }
  out.flags = res.trajectory.flags;
  out.footprints = detail::displaced(batch, out.displacement);
  out.runs.push_back(std::move(res.trajectory));
  return out;
}

// ---------------------------------------------------------------------------
// Convergence analysis

struct OscillationOptions {
  int window_start = 10;  // n
  int window_width = 10;
  double tolerance = 0.05;               // relative spread of running means
  std::optional<double> nu_hat;          // normalization; estimated when absent
};

struct ConvergenceReport {
  double energy = 0.0;
  double nu_hat = 1.0;
  std::vector<double> step_energy;    // index t-1: mean a_t^2 |raw_t|^2 / nu_hat^2
  std::vector<double> mean_epe;       // index t: mean centroid error at step t (empty without truth)
  std::vector<double> running_means;  // index k: mean step energy over steps n..n+k
  std::vector<double> window_means;   // full windows of window_width steps starting at n
  std::vector<double> radius_by_step; // index t-n: mean distance to each instance's ring center
  double stationary_radius = 0.0;
  double running_spread = 0.0;        // (max - min) / |last| of running means over the last half
  double tolerance = 0.05;
  bool converged = false;
};

/// Convergence diagnostics for constant-step runs: per-step normalized step
/// energies, their running means from step n (which settle to a constant when
/// positions circle the target instead of approaching it), and the radius of
/// that ring.
///
/// `truth`, when given, holds per-trajectory ground-truth centroids and
/// enables the per-step EPE curve.
inline ConvergenceReport analyze_oscillation(std::span<const Trajectory> runs, const OscillationOptions& opt,
                                             std::span<const std::vector<Point2>> truth = {}) {
  if (runs.empty()) throw InvalidArgument("no trajectories to analyze");
  const std::size_t T = runs.front().steps();
  for (const auto& tr : runs)
    if (tr.steps() != T) throw InvalidArgument("trajectories differ in step count");
  const auto n = static_cast<std::size_t>(opt.window_start);
  if (opt.window_start < 1 || T <= n) throw InvalidArgument("window start must be below the step count");
  if (opt.window_width < 1) throw InvalidArgument("window width must be positive");
  if (!truth.empty() && truth.size() != runs.size()) throw InvalidArgument("truth does not match trajectories");

  ConvergenceReport rep;
  rep.tolerance = opt.tolerance;
  for (double a : runs.front().weights) rep.energy += a;

  std::size_t instances = 0;
  for (const auto& tr : runs) instances += tr.count();
  const double inv_count = 1.0 / static_cast<double>(instances);

  if (opt.nu_hat) {
    rep.nu_hat = *opt.nu_hat;
  } else {
    double ss = 0.0;
    for (std::size_t r = 0; r < runs.size(); ++r)
      for (std::size_t i = 0; i < runs[r].count(); ++i) {
        const OffsetVec e = truth.empty() ? runs[r].weights[0] * runs[r].raw_offsets[0][i]
                                          : runs[r].centroids[0][i] - truth[r][i];
        ss += e.squared_norm();
      }
    rep.nu_hat = std::sqrt(0.5 * ss * inv_count);
    if (!(rep.nu_hat > 0.0)) rep.nu_hat = 1.0;
  }
  const double inv_nu2 = 1.0 / (rep.nu_hat * rep.nu_hat);

  rep.step_energy.assign(T, 0.0);
  for (const auto& tr : runs)
    for (std::size_t t = 0; t < T; ++t) {
      const double a2 = tr.weights[t] * tr.weights[t];
      for (const OffsetVec& raw : tr.raw_offsets[t]) rep.step_energy[t] += a2 * raw.squared_norm() * inv_nu2;
    }
  for (double& e : rep.step_energy) e *= inv_count;

  if (!truth.empty()) {
    rep.mean_epe.assign(T + 1, 0.0);
    for (std::size_t r = 0; r < runs.size(); ++r)
      for (std::size_t t = 0; t <= T; ++t)
        for (std::size_t i = 0; i < runs[r].count(); ++i)
          rep.mean_epe[t] += distance(runs[r].centroids[t][i], truth[r][i]) * inv_count;
  }

  // steps n..T are indices n-1..T-1 of step_energy
  double acc = 0.0;
  for (std::size_t t = n; t <= T; ++t) {
    acc += rep.step_energy[t - 1];
    rep.running_means.push_back(acc / static_cast<double>(t - n + 1));
  }
  const auto w = static_cast<std::size_t>(opt.window_width);
  for (std::size_t s = n; s + w - 1 <= T; s += w) {
    double sum = 0.0;
    for (std::size_t t = s; t < s + w; ++t) sum += rep.step_energy[t - 1];
    rep.window_means.push_back(sum / static_cast<double>(w));
  }

  const std::size_t half = rep.running_means.size() / 2;
  const auto tail = std::span(rep.running_means).subspan(half);
  const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
  const double last = rep.running_means.back();
  if (std::abs(last) <= 1e-12) {
    rep.running_spread = 0.0;
    rep.converged = *hi <= 1e-12;
  } else {
    rep.running_spread = (*hi - *lo) / std::abs(last);
    rep.converged = rep.running_spread < opt.tolerance;
  }

  // ring center = per-instance mean position over steps n..T
  rep.radius_by_step.assign(T - n + 1, 0.0);
  for (const auto& tr : runs)
    for (std::size_t i = 0; i < tr.count(); ++i) {
      double cx = 0.0, cy = 0.0;
      for (std::size_t t = n; t <= T; ++t) {
        cx += tr.centroids[t][i].x;
        cy += tr.centroids[t][i].y;
      }
      const Point2 center{cx / static_cast<double>(T - n + 1), cy / static_cast<double>(T - n + 1)};
      for (std::size_t t = n; t <= T; ++t) rep.radius_by_step[t - n] += distance(tr.centroids[t][i], center) * inv_count;
    }
  double rsum = 0.0;
  for (double r : rep.radius_by_step) rsum += r;
  rep.stationary_radius = rsum / static_cast<double>(rep.radius_by_step.size());
  return rep;
}

}  // namespace osmalign
