#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "osmalign/codec.hpp"
#include "osmalign/dataio.hpp"
#include "osmalign/denoise.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/metrics.hpp"
#include "osmalign/predictor.hpp"
#include "osmalign/synth.hpp"

namespace osmalign {

// ---------------------------------------------------------------------------
// Synthetic datasets

inline nlohmann::json scene_config_json(const SceneConfig& c) {
  nlohmann::json j = {{"width", c.width},
                      {"height", c.height},
                      {"n_buildings", c.n_buildings},
                      {"size_range", {c.size_min, c.size_max}},
                      {"height_range", {c.height_min, c.height_max}},
                      {"osm_nu", c.osm_nu},
                      {"blur_radius", c.blur_radius},
                      {"min_gap", c.min_gap},
                      {"border", c.border},
                      {"max_attempts", c.max_attempts},
                      {"seed", c.seed}};
  j["view_azimuth"] = c.view_azimuth ? nlohmann::json(*c.view_azimuth) : nlohmann::json(nullptr);
  return j;
}

struct DatasetBuild {
  io::Dataset dataset;
  int placement_failures = 0;
};

/// Generates n_images scenes. Image k uses a seed derived from the master
/// seed and k. With `mixed_views`, odd-indexed images are rendered
/// near-nadir (zero roof offset) and tagged accordingly.
inline DatasetBuild make_dataset(const SceneConfig& cfg, int n_images, bool mixed_views = false) {
  if (n_images < 1) throw InvalidArgument("need at least one image");
  cfg.validate();
  DatasetBuild out;
  auto& ds = out.dataset;
  ds.manifest.master_seed = cfg.seed;
  ds.manifest.generator = scene_config_json(cfg);
  ds.manifest.generator["images"] = n_images;
  ds.manifest.generator["mixed_views"] = mixed_views;

  std::uint64_t next_id = 0;
  for (int k = 0; k < n_images; ++k) {
    SceneConfig sc = cfg;
    sc.seed = stream_key(cfg.seed, {0x1A6EULL, static_cast<std::uint64_t>(k)});
    if (mixed_views && k % 2 == 1) sc.height_min = sc.height_max = 0.0;
    Scene scene = generate_scene(sc);
    out.placement_failures += scene.placement_failures;

    io::ImageEntry im;
    im.id = static_cast<std::uint64_t>(k);
    im.width = sc.width;
    im.height = sc.height;
    im.view = sc.near_nadir() ? "near_nadir" : "off_nadir";
    im.azimuth = scene.azimuth;
    im.seed = sc.seed;
    im.channels["footprint_evidence"] = io::channel_file(im.id, "footprint_evidence");
    im.channels["roof_evidence"] = io::channel_file(im.id, "roof_evidence");
    ds.manifest.images.push_back(im);

    for (auto& inst : scene.instances)
      ds.records.push_back({next_id++, im.id, std::move(inst.osm), std::move(inst.footprint), std::move(inst.roof),
                            inst.f_vec, inst.o_vec, inst.r_vec});
    ds.channels.emplace(im.id, io::ImageChannels{std::move(scene.channels.footprint_evidence),
                                                 std::move(scene.channels.roof_evidence)});
  }
  return out;
}

/// make_dataset + write_dataset, plus config.json echoing the generator.
inline DatasetBuild build_dataset(const SceneConfig& cfg, int n_images, const io::fs::path& dir,
                                  bool mixed_views = false) {
  DatasetBuild b = make_dataset(cfg, n_images, mixed_views);
  io::write_dataset(b.dataset, dir);
  io::write_file(dir / "config.json",
                 io::canonical_dump({{"format_version", io::kFormatVersion}, {"synth", b.dataset.manifest.generator}}));
  return b;
}

// ---------------------------------------------------------------------------
// Alignment runs

enum class PredictorKind { oracle, correlation };

struct RunConfig {
  PredictorKind predictor = PredictorKind::correlation;
  OraclePredictorParams oracle{};
  CorrelationParams footprint_search{32, ChannelKind::footprint_evidence, CorrelationScore::normalized_overlap};
  CorrelationParams roof_search{64, ChannelKind::roof_evidence, CorrelationScore::normalized_overlap};
  Schedule schedule{};
  TTAConfig tta{};
  OffsetCodec codec{};
  double gamma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    oracle.validate();
    footprint_search.validate();
    roof_search.validate();
    schedule.validate();
    tta.validate();
    if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be non-negative");
  }
};

inline const char* to_string(TtaStrategy s) {
  switch (s) {
    case TtaStrategy::t1: return "t1";
    case TtaStrategy::t1_5: return "t1_5";
    default: return "none";
  }
}

inline const char* to_string(CorrelationScore s) {
  return s == CorrelationScore::overlap_sum ? "overlap_sum" : "normalized_overlap";
}

inline TtaStrategy parse_tta(const std::string& s) {
  if (s == "none") return TtaStrategy::none;
  if (s == "t1") return TtaStrategy::t1;
  if (s == "t1_5" || s == "t1.5") return TtaStrategy::t1_5;
  throw InvalidArgument("unknown TTA strategy " + s);
}

inline CorrelationScore parse_score(const std::string& s) {
  if (s == "overlap_sum") return CorrelationScore::overlap_sum;
  if (s == "normalized_overlap") return CorrelationScore::normalized_overlap;
  throw InvalidArgument("unknown correlation score " + s);
}

inline PredictorKind parse_predictor(const std::string& s) {
  if (s == "oracle") return PredictorKind::oracle;
  if (s == "correlation") return PredictorKind::correlation;
  throw InvalidArgument("unknown predictor " + s);
}

inline nlohmann::json run_config_json(const RunConfig& c) {
  return {{"predictor",
           {{"kind", c.predictor == PredictorKind::oracle ? "oracle" : "correlation"},
            {"kappa", c.oracle.kappa},
            {"rho", c.oracle.rho},
            {"search_radius", c.footprint_search.search_radius},
            {"roof_search_radius", c.roof_search.search_radius},
            {"score", to_string(c.footprint_search.score)}}},
          {"schedule", {{"delta", c.schedule.delta}, {"steps", c.schedule.steps}}},
          {"tta",
           {{"strategy", to_string(c.tta.strategy)},
            {"runs", c.tta.runs},
            {"extra_steps", c.tta.extra_steps},
            {"perturb_sigma", c.tta.perturb_sigma}}},
          {"codec", {{"alpha", {c.codec.alpha().dx, c.codec.alpha().dy}}, {"beta", c.codec.beta()}}},
          {"gamma", c.gamma},
          {"seed", c.seed}};
}

/// Overlays the fields present in `j` (same shape as run_config_json) onto
/// `base`.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base) {
  try {
    if (j.contains("predictor")) {
      const auto& p = j.at("predictor");
      if (p.contains("kind")) base.predictor = parse_predictor(p.at("kind").get<std::string>());
      if (p.contains("kappa")) base.oracle.kappa = p.at("kappa").get<double>();
      if (p.contains("rho")) base.oracle.rho = p.at("rho").get<double>();
      if (p.contains("search_radius")) base.footprint_search.search_radius = p.at("search_radius").get<int>();
      if (p.contains("roof_search_radius")) base.roof_search.search_radius = p.at("roof_search_radius").get<int>();
      if (p.contains("score")) base.footprint_search.score = base.roof_search.score = parse_score(p.at("score").get<std::string>());
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      if (s.contains("delta")) base.schedule.delta = s.at("delta").get<double>();
      if (s.contains("steps")) base.schedule.steps = s.at("steps").get<int>();
    }
    if (j.contains("tta")) {
      const auto& t = j.at("tta");
      if (t.contains("strategy")) base.tta.strategy = parse_tta(t.at("strategy").get<std::string>());
      if (t.contains("runs")) base.tta.runs = t.at("runs").get<int>();
      if (t.contains("extra_steps")) base.tta.extra_steps = t.at("extra_steps").get<int>();
      if (t.contains("perturb_sigma")) base.tta.perturb_sigma = t.at("perturb_sigma").get<double>();
    }
    if (j.contains("codec")) {
      const auto& c = j.at("codec");
      OffsetVec alpha = base.codec.alpha();
      double beta = base.codec.beta();
      if (c.contains("alpha")) alpha = io::offset_from(c.at("alpha"), "codec alpha");
      if (c.contains("beta")) beta = c.at("beta").get<double>();
      base.codec = OffsetCodec(alpha, beta);
    }
    if (j.contains("gamma")) base.gamma = j.at("gamma").get<double>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad run configuration: ") + e.what());
  }
  return base;
}

struct AlignOutcome {
  io::PredictionFile predictions;
  /// Mean footprint centroid error after each step t = 0..T of the plain
  /// run (first run for t1; the extended run for t1.5).
  std::vector<double> step_mean_epe;
  double final_mean_epe = 0.0;
  double mean_alignment_loss = 0.0;
  /// Per instance | (f_hat + o_hat) - (centroid(roof_hat) - centroid(osm)) |.
  std::vector<double> closure_error;
  std::size_t flagged = 0;
  std::string trajectory_dump;
};

inline std::unique_ptr<OffsetPredictor> make_predictor(const RunConfig& cfg, std::uint64_t image_id) {
  if (cfg.predictor == PredictorKind::oracle) {
    OraclePredictorParams p = cfg.oracle;
    p.seed = stream_key(cfg.seed, {0x0AC1EULL, image_id});
    return std::make_unique<OraclePredictor>(p);
  }
  return std::make_unique<CorrelationPredictor>(cfg.footprint_search, cfg.roof_search);
}

/// Runs footprint denoising (optionally with TTA) and the roof lift on every
/// image of the dataset. Prediction records come out in dataset order.
inline AlignOutcome align_dataset(const io::Dataset& ds, const RunConfig& cfg, bool record_trajectories = false,
                                  const std::string& trajectory_ref = {}) {
  cfg.validate();
  AlignOutcome out;
  out.predictions.config = run_config_json(cfg);
  std::vector<double> step_sum;
  double loss_sum = 0.0, final_sum = 0.0;
  std::size_t total = 0;

  for (const auto& im : ds.manifest.images) {
    const auto recs = ds.records_of(im.id);
    if (recs.empty()) continue;
    std::vector<Polygon> osm;
    std::vector<std::uint64_t> ids;
    PredictorContext ctx;
    const auto& ch = ds.channels.at(im.id);
    ctx.footprint_evidence = ch.footprint_evidence;
    ctx.roof_evidence = ch.roof_evidence;
    std::vector<InstanceTruth> truth;
    for (const auto* r : recs) {
      osm.push_back(r->osm);
      ids.push_back(r->id);
      truth.push_back({centroid(r->footprint), centroid(r->roof)});
    }
    if (cfg.predictor == PredictorKind::oracle) ctx.hidden_truth = truth;
    const PolygonBatch batch = pad_batch(osm);
    const auto predictor = make_predictor(cfg, im.id);

    TTAConfig tta = cfg.tta;
    tta.seed = stream_key(cfg.seed, {0x77AULL, im.id});
    PolygonBatch footprints;
    std::vector<OffsetVec> f_hat;
    std::vector<std::uint8_t> flags;
    std::vector<Trajectory> runs;
    if (tta.strategy == TtaStrategy::none) {
      DenoiseResult res = denoise_footprint(ctx, batch, *predictor, cfg.schedule);
      footprints = std::move(res.footprints);
      f_hat = res.trajectory.final_displacement();
      flags = res.trajectory.flags;
      runs.push_back(std::move(res.trajectory));
    } else {
      TtaResult res = tta.strategy == TtaStrategy::t1 ? tta_t1(ctx, batch, *predictor, cfg.schedule, tta)
                                                      : tta_t15(ctx, batch, *predictor, cfg.schedule, tta);
      footprints = std::move(res.footprints);
      f_hat = std::move(res.displacement);
      flags = std::move(res.flags);
      runs = std::move(res.runs);
    }
    const RoofLift roof = lift_to_roof(ctx, footprints, *predictor);

    const Trajectory& first = runs.front();
    if (step_sum.size() < first.steps() + 1) step_sum.resize(first.steps() + 1, 0.0);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      for (std::size_t t = 0; t <= first.steps(); ++t) step_sum[t] += distance(first.centroids[t][i], truth[i].footprint);
      const Polygon fp = footprints.polygon(i);
      final_sum += distance(centroid(fp), truth[i].footprint);

      const std::uint8_t fl = flags[i] | roof.flags[i];
      if (fl != kFlagNone) ++out.flagged;
      const OffsetVec r_hat = centroid(roof.roofs.polygon(i)) - centroid(osm[i]);
      out.closure_error.push_back((compose(f_hat[i], roof.offsets[i]) - r_hat).norm());
      loss_sum += alignment_loss(cfg.codec.encode(f_hat[i]), cfg.codec.encode(recs[i]->f_vec),
                                 cfg.codec.encode(roof.offsets[i]), cfg.codec.encode(recs[i]->o_vec), cfg.gamma);

      io::PredictionRecord pr;
      pr.id = recs[i]->id;
      pr.footprint = fp;
      pr.roof = roof.roofs.polygon(i);
      pr.f_hat = f_hat[i];
      pr.o_hat = roof.offsets[i];
      pr.flags = io::flag_names(fl);
      if (record_trajectories && !trajectory_ref.empty()) pr.trajectory = trajectory_ref;
      out.predictions.records.push_back(std::move(pr));
    }
    total += recs.size();
    if (record_trajectories)
      for (std::size_t r = 0; r < runs.size(); ++r)
        out.trajectory_dump += io::encode_trajectory_lines(runs[r], r, im.id, ids);
  }
  if (total > 0) {
    for (double& s : step_sum) s /= static_cast<double>(total);
    out.final_mean_epe = final_sum / static_cast<double>(total);
    out.mean_alignment_loss = loss_sum / static_cast<double>(total);
  }
  out.step_mean_epe = std::move(step_sum);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Scores predictions against the dataset ground truth: per-image union
/// masks for roofs and footprints, per-instance EPE and LE.
inline Report evaluate(const io::Dataset& ds, const io::PredictionFile& pf) {
  std::map<std::uint64_t, const io::PredictionRecord*> by_id;
  for (const auto& p : pf.records) by_id[p.id] = &p;

  std::vector<InstanceErrors> errors;
  std::vector<ImageConfusion> confusions;
  for (const auto& im : ds.manifest.images) {
    std::vector<Polygon> gt_fp, gt_roof, pr_fp, pr_roof;
    for (const auto* r : ds.records_of(im.id)) {
      const auto it = by_id.find(r->id);
      if (it == by_id.end()) throw IdMismatchError("prediction ids do not match dataset", {"missing id " + std::to_string(r->id)});
      const auto& p = *it->second;
      gt_fp.push_back(r->footprint);
      gt_roof.push_back(r->roof);
      pr_fp.push_back(p.footprint);
      pr_roof.push_back(p.roof);
      errors.push_back({epe(p.footprint, r->footprint), epe(p.roof, r->roof), le(p.o_hat, r->o_vec)});
    }
    confusions.push_back({confusion(rasterize_union(pr_roof, im.width, im.height), rasterize_union(gt_roof, im.width, im.height)),
                          confusion(rasterize_union(pr_fp, im.width, im.height), rasterize_union(gt_fp, im.width, im.height))});
  }
  return aggregate(errors, confusions);
}

/// Prediction file that reproduces the ground truth exactly.
inline io::PredictionFile ground_truth_predictions(const io::Dataset& ds, OffsetVec footprint_shift = {}) {
  io::PredictionFile pf;
  for (const auto& r : ds.records) {
    io::PredictionRecord p;
    p.id = r.id;
    p.footprint = translate(r.footprint, footprint_shift);
    p.roof = translate(r.roof, footprint_shift);
    p.f_hat = r.f_vec + footprint_shift;
    p.o_hat = r.o_vec;
    pf.records.push_back(std::move(p));
  }
  return pf;
}

}  // namespace osmalign
