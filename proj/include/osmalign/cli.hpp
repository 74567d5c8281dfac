#pragma once

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "osmalign/dataio.hpp"
#include "osmalign/denoise.hpp"
#include "osmalign/pipeline.hpp"

namespace osmalign::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kFlagged = 4,
  kIdMismatch = 5,
};

inline constexpr const char* kDatasetEnv = "OSMALIGN_DATASET";

inline std::string format_delta(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", d);
  return buf;
}

inline std::string format_energy(double e) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", e);
  return buf;
}

/// CSV of (delta, steps, energy) over the cartesian grid.
inline std::string energy_grid_csv(const std::vector<double>& deltas, const std::vector<int>& steps) {
  std::string out = "delta,steps,energy\n";
  for (int t : steps)
    for (double d : deltas) out += format_delta(d) + "," + std::to_string(t) + "," + format_energy(energy(d, t)) + "\n";
  return out;
}

/// Self-contained SVG scatter plot.
inline std::string scatter_svg(const std::vector<std::pair<double, double>>& pts, const std::string& xlabel,
                               const std::string& ylabel) {
  const double W = 480, H = 360, M = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].first;
    y0 = y1 = pts[0].second;
    for (auto [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 - x0 < 1e-9) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
  auto sx = [&](double x) { return M + (x - x0) / (x1 - x0) * (W - 2 * M); };
  auto sy = [&](double y) { return H - M - (y - y0) / (y1 - y0) * (H - 2 * M); };
  const auto f = io::format_real;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" viewBox=\"0 0 480 360\">\n";
  s += "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
  s += "<line x1=\"50\" y1=\"310\" x2=\"430\" y2=\"310\" stroke=\"black\"/>\n";
  s += "<line x1=\"50\" y1=\"50\" x2=\"50\" y2=\"310\" stroke=\"black\"/>\n";
  s += "<text x=\"240\" y=\"345\" text-anchor=\"middle\" font-size=\"12\">" + xlabel + "</text>\n";
  s += "<text x=\"15\" y=\"180\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 180)\">" + ylabel + "</text>\n";
  s += "<text x=\"50\" y=\"325\" font-size=\"10\">" + f(x0) + "</text>\n";
  s += "<text x=\"430\" y=\"325\" text-anchor=\"end\" font-size=\"10\">" + f(x1) + "</text>\n";
  s += "<text x=\"45\" y=\"310\" text-anchor=\"end\" font-size=\"10\">" + f(y0) + "</text>\n";
  s += "<text x=\"45\" y=\"55\" text-anchor=\"end\" font-size=\"10\">" + f(y1) + "</text>\n";
  for (auto [x, y] : pts)
    s += "<circle cx=\"" + f(sx(x)) + "\" cy=\"" + f(sy(y)) + "\" r=\"4\" fill=\"steelblue\"/>\n";
  s += "</svg>\n";
  return s;
}

namespace detail {

inline int synth(const io::fs::path& out_dir, const SceneConfig& cfg, int images, bool mixed, std::ostream& out) {
  const DatasetBuild b = build_dataset(cfg, images, out_dir, mixed);
  double disp = 0.0;
  for (const auto& r : b.dataset.records) disp += r.f_vec.norm();
  const std::size_t n = b.dataset.records.size();
  out << io::canonical_dump({{"images", images},
                             {"instances", n},
                             {"seed", cfg.seed},
                             {"placement_failures", b.placement_failures},
                             {"mean_initial_displacement", n ? disp / static_cast<double>(n) : 0.0}});
  return kOk;
}

inline nlohmann::json epe_array(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(x);
  return a;
}

}  // namespace detail

/// Entry point shared by the executable and the tests. Returns the exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Historical building-label alignment: synthetic benchmarks, iterative offset denoising, evaluation"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark dataset");
  SceneConfig scfg;
  std::string synth_out;
  int images = 20;
  bool mixed = false;
  std::pair<double, double> height_range{scfg.height_min, scfg.height_max};
  std::pair<int, int> size_range{scfg.size_min, scfg.size_max};
  double azimuth = 0.0;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--images", images, "Number of images");
  synth->add_option("--buildings", scfg.n_buildings, "Buildings per image");
  synth->add_option("--nu", scfg.osm_nu, "Std of the rigid OSM misplacement (px)");
  synth->add_option("--height-range", height_range, "Roof offset magnitude range min,max (px)")->delimiter(',');
  auto* az_opt = synth->add_option("--azimuth", azimuth, "View azimuth in radians (default: random per image)");
  synth->add_option("--seed", scfg.seed, "Master seed");
  synth->add_option("--width", scfg.width, "Image width (px)");
  synth->add_option("--height", scfg.height, "Image height (px)");
  synth->add_option("--size-range", size_range, "Footprint side length range min,max (px)")->delimiter(',');
  synth->add_option("--blur", scfg.blur_radius, "Box blur radius of evidence channels (px)");
  synth->add_option("--min-gap", scfg.min_gap, "Minimum gap between footprints (px)");
  synth->add_flag("--mixed", mixed, "Render every other image near-nadir");

  // align ------------------------------------------------------------------
  auto* align = app.add_subcommand("align", "Align OSM labels of a dataset to its evidence");
  RunConfig rc;
  std::string dataset, pred_out, traj_out, config_path;
  std::string predictor = "correlation", score = "normalized_overlap", tta = "none";
  std::pair<double, double> alpha{0.0, 0.0};
  double beta = OffsetCodec::kDefaultBeta;
  bool strict = false, lenient = false;
  align->add_option("--dataset", dataset, "Dataset directory")->envname(kDatasetEnv);
  align->add_option("--out", pred_out, "Prediction file (default: <dataset>/predictions.json)");
  align->add_option("--trajectories", traj_out, "Write a JSON-lines trajectory dump here");
  align->add_option("--config", config_path, "JSON run configuration (its \"align\" section); flags override it");
  std::map<std::string, CLI::Option*> ao;
  ao["predictor"] = align->add_option("--predictor", predictor, "oracle | correlation")->check(CLI::IsMember({"oracle", "correlation"}));
  ao["kappa"] = align->add_option("--kappa", rc.oracle.kappa, "Oracle contraction toward truth");
  ao["rho"] = align->add_option("--rho", rc.oracle.rho, "Oracle prediction noise std (px)");
  ao["radius"] = align->add_option("--search-radius", rc.footprint_search.search_radius, "Footprint search window (px)");
  ao["roof_radius"] = align->add_option("--roof-search-radius", rc.roof_search.search_radius, "Roof search window (px)");
  ao["score"] = align->add_option("--score", score, "normalized_overlap | overlap_sum")->check(CLI::IsMember({"normalized_overlap", "overlap_sum"}));
  ao["delta"] = align->add_option("--delta", rc.schedule.delta, "Step decay factor");
  ao["steps"] = align->add_option("--steps", rc.schedule.steps, "Denoising steps T");
  ao["tta"] = align->add_option("--tta", tta, "none | t1 | t1_5")->check(CLI::IsMember({"none", "t1", "t1_5", "t1.5"}));
  ao["tta_runs"] = align->add_option("--tta-runs", rc.tta.runs, "t1: number of runs");
  ao["tta_extra"] = align->add_option("--tta-extra-steps", rc.tta.extra_steps, "t1.5: extra averaged steps");
  ao["tta_sigma"] = align->add_option("--tta-sigma", rc.tta.perturb_sigma, "t1: perturbation std (px)");
  ao["alpha"] = align->add_option("--alpha", alpha, "Codec mean center dx,dy")->delimiter(',');
  ao["beta"] = align->add_option("--beta", beta, "Codec scale");
  ao["gamma"] = align->add_option("--gamma", rc.gamma, "Alignment loss weight");
  ao["seed"] = align->add_option("--seed", rc.seed, "Run seed");
  align->add_flag("--strict", strict, "Exit 4 if any instance is flagged");
  align->add_flag("--lenient", lenient, "Drop invalid annotation records instead of failing");

  // evaluate ---------------------------------------------------------------
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::string eval_dataset, eval_pred, eval_out;
  evaluate_cmd->add_option("--dataset", eval_dataset, "Dataset directory")->envname(kDatasetEnv);
  evaluate_cmd->add_option("--predictions", eval_pred, "Prediction file (default: <dataset>/predictions.json)");
  evaluate_cmd->add_option("--out-dir", eval_out, "Where metrics.json and metrics.csv go (default: dataset dir)");

  // analyze ----------------------------------------------------------------
  auto* analyze = app.add_subcommand("analyze", "Schedule energy grid and convergence analysis");
  bool grid = false;
  std::vector<double> deltas{0.1, 0.3, 0.5, 0.9, 1.0, 1.1, 1.2, 1.3};
  std::vector<int> steps_list{5, 10};
  std::vector<std::string> traj_files;
  std::string an_dataset, an_out;
  OscillationOptions osc;
  analyze->add_flag("--grid", grid, "Emit the (delta, T, E) grid as CSV");
  analyze->add_option("--delta", deltas, "Decay factors for --grid")->delimiter(',');
  analyze->add_option("--steps", steps_list, "Step counts for --grid")->delimiter(',');
  analyze->add_option("--trajectories", traj_files, "Trajectory dumps from align");
  analyze->add_option("--dataset", an_dataset, "Dataset for per-step EPE (optional)");
  analyze->add_option("--out-dir", an_out, "Directory for convergence.csv, energy_scatter.svg, oscillation.json");
  analyze->add_option("--window-start", osc.window_start, "First step n of the stationary window");
  analyze->add_option("--window-width", osc.window_width, "Width of energy windows");
  analyze->add_option("--tolerance", osc.tolerance, "Relative spread for the converged verdict");

  std::vector<const char*> argv{"osmalign"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*synth) {
      scfg.height_min = height_range.first;
      scfg.height_max = height_range.second;
      scfg.size_min = size_range.first;
      scfg.size_max = size_range.second;
      if (az_opt->count()) scfg.view_azimuth = azimuth;
      if (images < 1) throw InvalidArgument("--images must be at least 1");
      scfg.validate();
      return detail::synth(synth_out, scfg, images, mixed, out);
    }

    if (*align) {
      if (dataset.empty()) throw InvalidArgument("--dataset is required (or set " + std::string(kDatasetEnv) + ")");
      RunConfig cfg;
      if (!config_path.empty()) {
        const auto j = io::read_json(config_path);
        cfg = run_config_from_json(j.contains("align") ? j.at("align") : j, cfg);
      }
      auto given = [&](const char* k) { return ao.at(k)->count() > 0; };
      if (given("predictor")) cfg.predictor = parse_predictor(predictor);
      if (given("kappa")) cfg.oracle.kappa = rc.oracle.kappa;
      if (given("rho")) cfg.oracle.rho = rc.oracle.rho;
      if (given("radius")) cfg.footprint_search.search_radius = rc.footprint_search.search_radius;
      if (given("roof_radius")) cfg.roof_search.search_radius = rc.roof_search.search_radius;
      if (given("score")) cfg.footprint_search.score = cfg.roof_search.score = parse_score(score);
      if (given("delta")) cfg.schedule.delta = rc.schedule.delta;
      if (given("steps")) cfg.schedule.steps = rc.schedule.steps;
      if (given("tta")) cfg.tta.strategy = parse_tta(tta);
      if (given("tta_runs")) cfg.tta.runs = rc.tta.runs;
      if (given("tta_extra")) cfg.tta.extra_steps = rc.tta.extra_steps;
      if (given("tta_sigma")) cfg.tta.perturb_sigma = rc.tta.perturb_sigma;
      if (given("alpha") || given("beta"))
        cfg.codec = OffsetCodec(given("alpha") ? OffsetVec{alpha.first, alpha.second} : cfg.codec.alpha(),
                                given("beta") ? beta : cfg.codec.beta());
      if (given("gamma")) cfg.gamma = rc.gamma;
      if (given("seed")) cfg.seed = rc.seed;
      cfg.validate();

      const io::Dataset ds = io::load_dataset(dataset, lenient);
      const io::fs::path pred_path = pred_out.empty() ? io::fs::path(dataset) / "predictions.json" : io::fs::path(pred_out);
      const std::string traj_ref = traj_out.empty() ? std::string{} : io::fs::path(traj_out).filename().string();
      const AlignOutcome res = align_dataset(ds, cfg, !traj_out.empty(), traj_ref);
      io::write_predictions(res.predictions, pred_path);
      if (!traj_out.empty()) io::write_file(traj_out, res.trajectory_dump);

      double max_closure = 0.0;
      for (double c : res.closure_error) max_closure = std::max(max_closure, c);
      out << io::canonical_dump({{"instances", res.predictions.records.size()},
                                 {"step_mean_epe", detail::epe_array(res.step_mean_epe)},
                                 {"final_mean_epe", res.final_mean_epe},
                                 {"mean_alignment_loss", res.mean_alignment_loss},
                                 {"max_closure_error", max_closure},
                                 {"flagged", res.flagged},
                                 {"config", res.predictions.config}});
      if (strict && res.flagged > 0) {
        err << res.flagged << " instance(s) flagged\n";
        return kFlagged;
      }
      return kOk;
    }

    if (*evaluate_cmd) {
      if (eval_dataset.empty()) throw InvalidArgument("--dataset is required (or set " + std::string(kDatasetEnv) + ")");
      const io::Dataset ds = io::load_dataset(eval_dataset);
      const io::fs::path pred = eval_pred.empty() ? io::fs::path(eval_dataset) / "predictions.json" : io::fs::path(eval_pred);
      const io::PredictionFile pf = io::load_predictions(pred, &ds);
      const Report rep = evaluate(ds, pf);
      const io::fs::path dir = eval_out.empty() ? io::fs::path(eval_dataset) : io::fs::path(eval_out);
      io::write_file(dir / "metrics.json", io::encode_metrics(rep, pf.config));
      io::write_file(dir / "metrics.csv", io::metrics_csv(rep));
      out << io::canonical_dump({{"mf", rep.mf},
                                 {"mi", rep.mi},
                                 {"mean_epe_footprint", rep.mean_epe_footprint},
                                 {"mean_epe_roof", rep.mean_epe_roof},
                                 {"ale", rep.ale},
                                 {"instances", rep.instances}});
      return kOk;
    }

    if (*analyze) {
      if (grid) {
        if (deltas.empty() || steps_list.empty()) throw InvalidArgument("empty grid");
        for (double d : deltas)
          if (!(d > 0.0)) throw InvalidArgument("grid deltas must be positive");
        for (int t : steps_list)
          if (t < 1) throw InvalidArgument("grid step counts must be >= 1");
        const std::string csv = energy_grid_csv(deltas, steps_list);
        if (an_out.empty()) out << csv;
        else io::write_file(io::fs::path(an_out) / "energy_grid.csv", csv);
        return kOk;
      }
      if (traj_files.empty()) throw InvalidArgument("analyze needs --grid or --trajectories");

      std::optional<io::Dataset> ds;
      if (!an_dataset.empty()) ds = io::load_dataset(an_dataset);
      std::map<std::uint64_t, Point2> truth_by_id;
      if (ds)
        for (const auto& r : ds->records) truth_by_id[r.id] = centroid(r.footprint);

      std::vector<Trajectory> all;
      std::vector<std::vector<Point2>> truth;
      std::vector<std::pair<double, double>> scatter;
      for (const auto& file : traj_files) {
        std::vector<std::vector<std::uint64_t>> ids;
        std::vector<std::uint64_t> run_of;
        auto trs = io::trajectories_from_rows(io::parse_trajectory_lines(io::read_file(file), file), ids, run_of);
        // one scatter point per (file, run)
        std::map<std::uint64_t, std::pair<double, std::pair<double, std::size_t>>> per_run;
        for (std::size_t k = 0; k < trs.size(); ++k) {
          double e = 0.0;
          for (double a : trs[k].weights) e += a;
          auto& acc = per_run[run_of[k]];
          acc.first = e;
          std::vector<Point2> tk;
          for (std::size_t i = 0; i < ids[k].size(); ++i) {
            double score_i;
            if (ds) {
              const auto it = truth_by_id.find(ids[k][i]);
              if (it == truth_by_id.end()) throw IdMismatchError("trajectory instance not in dataset", {std::to_string(ids[k][i])});
              tk.push_back(it->second);
              score_i = distance(trs[k].centroids.back()[i], it->second);
            } else {
              score_i = trs[k].steps() ? (trs[k].weights.back() * trs[k].raw_offsets.back()[i]).norm() : 0.0;
            }
            acc.second.first += score_i;
            ++acc.second.second;
          }
          if (ds) truth.push_back(std::move(tk));
          all.push_back(std::move(trs[k]));
        }
        for (const auto& [run, acc] : per_run)
          scatter.emplace_back(acc.first, acc.second.first / static_cast<double>(std::max<std::size_t>(1, acc.second.second)));
      }
      if (all.front().steps() <= static_cast<std::size_t>(osc.window_start))
        throw InvalidArgument("trajectories have T <= window start n");

      const ConvergenceReport rep = analyze_oscillation(all, osc, truth);
      const bool ring = rep.converged && rep.stationary_radius > 1e-9;
      const std::string status = !rep.converged ? "not converged" : (ring ? "converged ring" : "converged point");
      nlohmann::json report = {{"status", status},
                               {"energy", rep.energy},
                               {"nu_hat", rep.nu_hat},
                               {"window_start", osc.window_start},
                               {"window_width", osc.window_width},
                               {"window_means", detail::epe_array(rep.window_means)},
                               {"running_spread", rep.running_spread},
                               {"tolerance", rep.tolerance},
                               {"converged", rep.converged},
                               {"stationary_radius", rep.stationary_radius},
                               {"trajectories", all.size()}};
      const io::fs::path dir = an_out.empty() ? io::fs::path(".") : io::fs::path(an_out);
      io::write_file(dir / "convergence.csv", io::convergence_csv(rep, osc.window_start));
      io::write_file(dir / "energy_scatter.svg",
                     scatter_svg(scatter, "energy E", ds ? "final mean EPE (px)" : "final step magnitude (px)"));
      io::write_file(dir / "oscillation.json", io::canonical_dump(report));
      out << io::canonical_dump(report);
      return kOk;
    }
  } catch (const IdMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return kIdMismatch;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace osmalign::cli
