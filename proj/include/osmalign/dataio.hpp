#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "osmalign/codec.hpp"
#include "osmalign/denoise.hpp"
#include "osmalign/error.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/metrics.hpp"
#include "osmalign/predictor.hpp"

namespace osmalign::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kFormatVersion = "1";
inline constexpr double kOffsetClosureTolerance = 1e-6;

// ---------------------------------------------------------------------------
// Canonical text

/// Fixed six-decimal rendering; negative zero prints as zero.
inline std::string format_real(double v) {
  if (!std::isfinite(v)) throw InvalidArgument("cannot serialize non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

namespace detail {

inline bool inline_array(const json& j) {
  for (const auto& e : j)
    if (e.is_object() || (e.is_array() && !inline_array(e))) return false;
  return true;
}

inline void dump_canonical(const json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // keys iterate sorted
        if (!first) out += ",\n";
        first = false;
        out += pad_in + json(it.key()).dump() + ": ";
        dump_canonical(it.value(), out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      if (inline_array(j)) {
        out += "[";
        for (std::size_t k = 0; k < j.size(); ++k) {
          if (k) out += ", ";
          dump_canonical(j[k], out, indent);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t k = 0; k < j.size(); ++k) {
        if (k) out += ",\n";
        out += pad_in;
        dump_canonical(j[k], out, indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float:
      out += format_real(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

}  // namespace detail

/// Sorted keys, two-space indent, arrays without objects kept on one line,
/// reals with six decimals, trailing LF. Equal documents give equal bytes.
inline std::string canonical_dump(const json& j) {
  std::string out;
  detail::dump_canonical(j, out, 0);
  out += "\n";
  return out;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string(), "cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(path.string(), "write failed");
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Value encoding

inline json to_json(Point2 p) { return json::array({p.x, p.y}); }
inline json to_json(OffsetVec v) { return json::array({v.dx, v.dy}); }
inline json to_json(const Polygon& poly) {
  json a = json::array();
  for (Point2 p : poly.vertices) a.push_back(to_json(p));
  return a;
}

inline std::pair<double, double> pair_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ValidationError(what + ": expected [x, y]");
  const double a = j[0].get<double>(), b = j[1].get<double>();
  if (!std::isfinite(a) || !std::isfinite(b)) throw ValidationError(what + ": non-finite coordinate");
  return {a, b};
}

inline OffsetVec offset_from(const json& j, const std::string& what) {
  const auto [a, b] = pair_from(j, what);
  return {a, b};
}

inline Polygon polygon_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected vertex list");
  Polygon p;
  for (const auto& v : j) {
    const auto [x, y] = pair_from(v, what);
    p.vertices.push_back({x, y});
  }
  return p;
}

inline const json& field(const json& obj, const char* key, const std::string& what) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(what + ": missing field '" + key + "'");
  return obj.at(key);
}

inline void check_version(const json& doc, const std::string& what) {
  const json& v = field(doc, "format_version", what);
  if (!v.is_string() || v.get<std::string>() != kFormatVersion)
    throw ValidationError(what + ": unsupported format_version " + v.dump() + " (expected \"" + kFormatVersion + "\")");
}

// ---------------------------------------------------------------------------
// Portable graymap rasters

/// Binary PGM (P5), maxval 255, value round(255 * v).
inline std::string encode_pgm(const Channel& ch) {
  std::string out = "P5\n" + std::to_string(ch.width()) + " " + std::to_string(ch.height()) + "\n255\n";
  out.reserve(out.size() + ch.values().size());
  for (int j = 0; j < ch.height(); ++j)
    for (int i = 0; i < ch.width(); ++i) out.push_back(static_cast<char>(std::clamp(ch.level(i, j), 0, 255)));
  return out;
}

inline Channel decode_pgm(const std::string& bytes, const std::string& what) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw ValidationError(what + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw ValidationError(what + ": bad PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ValidationError(what + ": unsupported PGM dimensions or maxval");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < pos + need) throw ValidationError(what + ": truncated PGM data");
  Channel ch(w, h);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i)
      ch.at(i, j) = static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(j) * w + i]) / 255.0;
  return ch;
}

// ---------------------------------------------------------------------------
// Dataset

struct ImageEntry {
  std::uint64_t id = 0;
  int width = 0;
  int height = 0;
  std::string view = "off_nadir";  // near_nadir | off_nadir
  double azimuth = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> channels;  // channel name -> relative file
};

struct DatasetManifest {
  std::string format_version = kFormatVersion;
  std::vector<ImageEntry> images;
  std::string annotations = "annotations.json";
  json generator = json::object();
  std::uint64_t master_seed = 0;
};

struct AnnotationRecord {
  std::uint64_t id = 0;
  std::uint64_t image_id = 0;
  Polygon osm;
  Polygon footprint;
  Polygon roof;
  OffsetVec f_vec;
  OffsetVec o_vec;
  OffsetVec r_vec;
};

struct ImageChannels {
  Channel footprint_evidence;
  Channel roof_evidence;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<AnnotationRecord> records;
  std::map<std::uint64_t, ImageChannels> channels;
  /// Records dropped by a lenient load, one description per record.
  std::vector<std::string> rejected;

  std::vector<const AnnotationRecord*> records_of(std::uint64_t image_id) const {
    std::vector<const AnnotationRecord*> out;
    for (const auto& r : records)
      if (r.image_id == image_id) out.push_back(&r);
    return out;
  }
};

inline std::string channel_file(std::uint64_t image_id, const std::string& channel) {
  return "channels/img_" + std::to_string(image_id) + "_" + channel + ".pgm";
}

inline json manifest_json(const DatasetManifest& m) {
  json images = json::array();
  for (const auto& im : m.images) {
    json ch = json::object();
    for (const auto& [k, v] : im.channels) ch[k] = v;
    images.push_back({{"id", im.id},
                      {"width", im.width},
                      {"height", im.height},
                      {"view", im.view},
                      {"azimuth", im.azimuth},
                      {"seed", im.seed},
                      {"channels", ch}});
  }
  return {{"format_version", m.format_version},
          {"images", images},
          {"annotations", m.annotations},
          {"generator", m.generator},
          {"master_seed", m.master_seed}};
}

inline json annotations_json(const std::vector<AnnotationRecord>& records) {
  json arr = json::array();
  for (const auto& r : records)
    arr.push_back({{"id", r.id},
                   {"image_id", r.image_id},
                   {"osm", to_json(r.osm)},
                   {"footprint", to_json(r.footprint)},
                   {"roof", to_json(r.roof)},
                   {"f_vec", to_json(r.f_vec)},
                   {"o_vec", to_json(r.o_vec)},
                   {"r_vec", to_json(r.r_vec)}});
  return {{"format_version", kFormatVersion}, {"annotations", arr}};
}

/// Writes manifest.json, annotations.json and channels/*.pgm under `dir`.
/// The manifest is written last.
inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  for (const auto& im : ds.manifest.images) {
    const auto it = ds.channels.find(im.id);
    if (it == ds.channels.end()) throw InvalidArgument("no channels for image " + std::to_string(im.id));
    write_file(dir / channel_file(im.id, "footprint_evidence"), encode_pgm(it->second.footprint_evidence));
    write_file(dir / channel_file(im.id, "roof_evidence"), encode_pgm(it->second.roof_evidence));
  }
  write_file(dir / ds.manifest.annotations, canonical_dump(annotations_json(ds.records)));
  write_file(dir / "manifest.json", canonical_dump(manifest_json(ds.manifest)));
}

/// Problems with one annotation record, empty when the record is valid.
inline std::vector<std::string> record_problems(const AnnotationRecord& r, const std::set<std::uint64_t>& image_ids) {
  std::vector<std::string> out;
  const std::string tag = "id " + std::to_string(r.id);
  if (!image_ids.count(r.image_id)) out.push_back(tag + ": unknown image_id " + std::to_string(r.image_id));
  if (r.osm.size() < 3 || r.footprint.size() < 3 || r.roof.size() < 3) out.push_back(tag + ": fewer than 3 vertices");
  if ((r.r_vec - compose(r.f_vec, r.o_vec)).norm() > kOffsetClosureTolerance)
    out.push_back(tag + ": r_vec != f_vec + o_vec");
  return out;
}

/// Loads and validates a dataset directory. Any invalid record fails the
/// load unless `lenient`, in which case it is dropped and listed in
/// Dataset::rejected.
inline Dataset load_dataset(const fs::path& dir, bool lenient = false) {
  if (!fs::is_directory(dir)) throw IoError(dir.string(), "dataset directory not found");
  Dataset ds;
  const json man = read_json(dir / "manifest.json");
  check_version(man, "manifest.json");
  try {
    ds.manifest.annotations = field(man, "annotations", "manifest.json").get<std::string>();
    ds.manifest.master_seed = man.value("master_seed", std::uint64_t{0});
    ds.manifest.generator = man.value("generator", json::object());
    std::set<std::uint64_t> seen;
    for (const auto& j : field(man, "images", "manifest.json")) {
      ImageEntry im;
      im.id = field(j, "id", "manifest image").get<std::uint64_t>();
      im.width = field(j, "width", "manifest image").get<int>();
      im.height = field(j, "height", "manifest image").get<int>();
      im.view = field(j, "view", "manifest image").get<std::string>();
      im.azimuth = j.value("azimuth", 0.0);
      im.seed = j.value("seed", std::uint64_t{0});
      if (im.view != "near_nadir" && im.view != "off_nadir")
        throw ValidationError("manifest.json: image " + std::to_string(im.id) + " has unknown view tag " + im.view);
      if (!seen.insert(im.id).second) throw ValidationError("manifest.json: duplicate image id " + std::to_string(im.id));
      for (auto it = field(j, "channels", "manifest image").begin(); it != j.at("channels").end(); ++it)
        im.channels[it.key()] = it.value().get<std::string>();
      ds.manifest.images.push_back(std::move(im));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest.json: ") + e.what());
  }

  for (const auto& im : ds.manifest.images) {
    ImageChannels ch;
    for (const char* name : {"footprint_evidence", "roof_evidence"}) {
      const auto it = im.channels.find(name);
      if (it == im.channels.end())
        throw ValidationError("manifest.json: image " + std::to_string(im.id) + " lacks channel " + name);
      const fs::path p = dir / it->second;
      if (!fs::exists(p)) throw IoError(p.string(), "referenced channel file does not exist");
      Channel c = decode_pgm(read_file(p), p.string());
      if (c.width() != im.width || c.height() != im.height)
        throw ValidationError(p.string() + ": raster size disagrees with manifest");
      (std::string(name) == "footprint_evidence" ? ch.footprint_evidence : ch.roof_evidence) = std::move(c);
    }
    ds.channels.emplace(im.id, std::move(ch));
  }

  const fs::path ann_path = dir / ds.manifest.annotations;
  if (!fs::exists(ann_path)) throw IoError(ann_path.string(), "annotation file does not exist");
  const json ann = read_json(ann_path);
  check_version(ann, ann_path.filename().string());
  std::set<std::uint64_t> image_ids, record_ids;
  for (const auto& im : ds.manifest.images) image_ids.insert(im.id);

  std::vector<std::string> problems;
  try {
    for (const auto& j : field(ann, "annotations", "annotations")) {
      AnnotationRecord r;
      r.id = field(j, "id", "annotation").get<std::uint64_t>();
      const std::string tag = "annotation " + std::to_string(r.id);
      r.image_id = field(j, "image_id", tag).get<std::uint64_t>();
      r.osm = polygon_from(field(j, "osm", tag), tag + " osm");
      r.footprint = polygon_from(field(j, "footprint", tag), tag + " footprint");
      r.roof = polygon_from(field(j, "roof", tag), tag + " roof");
      r.f_vec = offset_from(field(j, "f_vec", tag), tag + " f_vec");
      r.o_vec = offset_from(field(j, "o_vec", tag), tag + " o_vec");
      r.r_vec = offset_from(field(j, "r_vec", tag), tag + " r_vec");
      if (!record_ids.insert(r.id).second) throw ValidationError("annotations: duplicate id " + std::to_string(r.id));
      auto bad = record_problems(r, image_ids);
      if (bad.empty()) {
        ds.records.push_back(std::move(r));
      } else {
        problems.insert(problems.end(), bad.begin(), bad.end());
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("annotations: ") + e.what());
  }
  if (!problems.empty() && !lenient) throw ValidationError("invalid annotation records", problems);
  ds.rejected = std::move(problems);
  return ds;
}

// ---------------------------------------------------------------------------
// Predictions

struct PredictionRecord {
  std::uint64_t id = 0;
  Polygon footprint;
  Polygon roof;
  OffsetVec f_hat;  // accumulated OSM-to-footprint correction
  OffsetVec o_hat;  // predicted footprint-to-roof offset
  std::vector<std::string> flags;
  std::optional<std::string> trajectory;
};

struct PredictionFile {
  json config = json::object();
  std::vector<PredictionRecord> records;
};

inline std::vector<std::string> flag_names(std::uint8_t flags) {
  std::vector<std::string> out;
  if (flags & kFlagFailed) out.emplace_back("failed");
  if (flags & kFlagWindowBoundary) out.emplace_back("window_boundary");
  return out;
}

inline std::string encode_predictions(const PredictionFile& pf) {
  json arr = json::array();
  for (const auto& r : pf.records) {
    json j = {{"id", r.id},
              {"footprint", to_json(r.footprint)},
              {"roof", to_json(r.roof)},
              {"f_hat", to_json(r.f_hat)},
              {"o_hat", to_json(r.o_hat)},
              {"flags", r.flags}};
    if (r.trajectory) j["trajectory"] = *r.trajectory;
    arr.push_back(std::move(j));
  }
  return canonical_dump({{"format_version", kFormatVersion}, {"config", pf.config}, {"predictions", arr}});
}

inline void write_predictions(const PredictionFile& pf, const fs::path& path) { write_file(path, encode_predictions(pf)); }

/// Loads a prediction file. With a dataset, ids must match its annotation ids
/// one-to-one (IdMismatchError names the offenders). Polygons with fewer
/// than three vertices are rejected by id.
inline PredictionFile load_predictions(const fs::path& path, const Dataset* dataset = nullptr) {
  const json doc = read_json(path);
  check_version(doc, path.filename().string());
  PredictionFile pf;
  pf.config = doc.value("config", json::object());
  std::vector<std::string> empty_ids;
  std::set<std::uint64_t> ids;
  try {
    for (const auto& j : field(doc, "predictions", "predictions")) {
      PredictionRecord r;
      r.id = field(j, "id", "prediction").get<std::uint64_t>();
      const std::string tag = "prediction " + std::to_string(r.id);
      r.footprint = polygon_from(field(j, "footprint", tag), tag + " footprint");
      r.roof = polygon_from(field(j, "roof", tag), tag + " roof");
      r.o_hat = offset_from(field(j, "o_hat", tag), tag + " o_hat");
      r.f_hat = j.contains("f_hat") ? offset_from(j.at("f_hat"), tag + " f_hat") : OffsetVec{};
      r.flags = j.value("flags", std::vector<std::string>{});
      if (j.contains("trajectory")) r.trajectory = j.at("trajectory").get<std::string>();
      if (r.footprint.size() < 3 || r.roof.size() < 3) empty_ids.push_back(std::to_string(r.id));
      if (!ids.insert(r.id).second) throw IdMismatchError("duplicate prediction id", {std::to_string(r.id)});
      pf.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("predictions: ") + e.what());
  }
  if (!empty_ids.empty()) throw IdMismatchError("prediction polygons with fewer than 3 vertices", empty_ids);

  if (dataset) {
    std::set<std::uint64_t> expected;
    for (const auto& r : dataset->records) expected.insert(r.id);
    std::vector<std::string> bad;
    for (std::uint64_t id : expected)
      if (!ids.count(id)) bad.push_back("missing id " + std::to_string(id));
    for (std::uint64_t id : ids)
      if (!expected.count(id)) bad.push_back("unknown id " + std::to_string(id));
    if (!bad.empty()) throw IdMismatchError("prediction ids do not match dataset", bad);
  }
  return pf;
}

// ---------------------------------------------------------------------------
// Metrics output

inline json scores_json(const MaskScores& s) {
  return {{"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}, {"iou", s.iou}};
}

inline std::string encode_metrics(const Report& r, const json& config = json::object()) {
  json doc = {{"format_version", kFormatVersion},
              {"metadata", {{"mask_aggregation", "micro"}, {"centroid", "area"}, {"empty_vs_empty_iou", 1.0}}},
              {"config", config},
              {"report",
               {{"roof", scores_json(r.roof)},
                {"footprint", scores_json(r.footprint)},
                {"mf", r.mf},
                {"mi", r.mi},
                {"mean_epe_roof", r.mean_epe_roof},
                {"mean_epe_footprint", r.mean_epe_footprint},
                {"ale", r.ale},
                {"instances", r.instances}}}};
  return canonical_dump(doc);
}

inline std::string metrics_csv(const Report& r) {
  std::string out =
      "roof_f1,roof_precision,roof_recall,roof_iou,footprint_f1,footprint_precision,footprint_recall,"
      "footprint_iou,mf,mi,mean_epe_roof,mean_epe_footprint,ale,instances\n";
  for (double v : {r.roof.f1, r.roof.precision, r.roof.recall, r.roof.iou, r.footprint.f1, r.footprint.precision,
                   r.footprint.recall, r.footprint.iou, r.mf, r.mi, r.mean_epe_roof, r.mean_epe_footprint, r.ale})
    out += format_real(v) + ",";
  out += std::to_string(r.instances) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory dumps

struct TrajectoryRow {
  std::uint64_t run = 0;
  std::uint64_t image_id = 0;
  std::uint64_t instance = 0;  // annotation id
  std::uint64_t t = 0;
  double a_t = 0.0;
  OffsetVec raw;
  Point2 centroid;
};

/// One JSON object per line per instance per step, t = 0 (input) .. T.
inline std::string encode_trajectory_lines(const Trajectory& tr, std::uint64_t run, std::uint64_t image_id,
                                           const std::vector<std::uint64_t>& ids) {
  if (ids.size() != tr.count()) throw InvalidArgument("trajectory id list does not match instance count");
  std::string out;
  for (std::size_t i = 0; i < tr.count(); ++i)
    for (std::size_t t = 0; t <= tr.steps(); ++t) {
      const double a = t == 0 ? 0.0 : tr.weights[t - 1];
      const OffsetVec raw = t == 0 ? OffsetVec{} : tr.raw_offsets[t - 1][i];
      std::string line = "{\"a_t\":" + format_real(a) + ",\"centroid\":[" + format_real(tr.centroids[t][i].x) + "," +
                         format_real(tr.centroids[t][i].y) + "],\"image_id\":" + std::to_string(image_id) +
                         ",\"instance\":" + std::to_string(ids[i]) + ",\"raw\":[" + format_real(raw.dx) + "," +
                         format_real(raw.dy) + "],\"run\":" + std::to_string(run) + ",\"t\":" + std::to_string(t) + "}\n";
      out += line;
    }
  return out;
}

inline std::vector<TrajectoryRow> parse_trajectory_lines(const std::string& text, const std::string& what) {
  std::vector<TrajectoryRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      TrajectoryRow r;
      r.run = j.at("run").get<std::uint64_t>();
      r.image_id = j.value("image_id", std::uint64_t{0});
      r.instance = j.at("instance").get<std::uint64_t>();
      r.t = j.at("t").get<std::uint64_t>();
      r.a_t = j.at("a_t").get<double>();
      r.raw = offset_from(j.at("raw"), what);
      const auto [x, y] = pair_from(j.at("centroid"), what);
      r.centroid = {x, y};
      rows.push_back(r);
    } catch (const json::exception& e) {
      throw ValidationError(what + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

/// Rebuilds compact trajectories (weights, raw offsets, centroids; no
/// polygons) from dump rows, one per (run, image). `ids` receives the
/// annotation ids of each trajectory's instances.
inline std::vector<Trajectory> trajectories_from_rows(const std::vector<TrajectoryRow>& rows,
                                                      std::vector<std::vector<std::uint64_t>>& ids,
                                                      std::vector<std::uint64_t>& run_of) {
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::map<std::uint64_t, std::map<std::uint64_t, TrajectoryRow>>> g;
  for (const auto& r : rows) g[{r.run, r.image_id}][r.instance][r.t] = r;

  std::vector<Trajectory> out;
  ids.clear();
  run_of.clear();
  for (const auto& [key, per_instance] : g) {
    Trajectory tr;
    std::vector<std::uint64_t> inst_ids;
    std::size_t T = per_instance.begin()->second.size() - 1;
    for (const auto& [id, steps] : per_instance) {
      if (steps.size() != T + 1 || steps.begin()->first != 0 || steps.rbegin()->first != T)
        throw ValidationError("trajectory dump: instance " + std::to_string(id) + " has inconsistent steps");
      inst_ids.push_back(id);
    }
    tr.centroids.assign(T + 1, std::vector<Point2>(inst_ids.size()));
    tr.raw_offsets.assign(T, std::vector<OffsetVec>(inst_ids.size()));
    tr.displacements.assign(T + 1, std::vector<OffsetVec>(inst_ids.size()));
    tr.weights.assign(T, 0.0);
    std::size_t i = 0;
    for (const auto& [id, steps] : per_instance) {
      for (const auto& [t, row] : steps) {
        tr.centroids[t][i] = row.centroid;
        tr.displacements[t][i] = row.centroid - steps.at(0).centroid;
        if (t > 0) {
          tr.raw_offsets[t - 1][i] = row.raw;
          tr.weights[t - 1] = row.a_t;
        }
      }
      ++i;
    }
    tr.flags.assign(inst_ids.size(), kFlagNone);
    tr.frozen.assign(inst_ids.size(), false);
    out.push_back(std::move(tr));
    ids.push_back(std::move(inst_ids));
    run_of.push_back(key.first);
  }
  return out;
}

/// Columns: t, mean EPE (empty when unknown), step energy, running mean of
/// step energy from the window start (empty before it).
inline std::string convergence_csv(const ConvergenceReport& rep, int window_start) {
  std::string out = "t,mean_epe,step_energy,running_energy\n";
  const std::size_t T = rep.step_energy.size();
  for (std::size_t t = 0; t <= T; ++t) {
    out += std::to_string(t) + ",";
    if (!rep.mean_epe.empty()) out += format_real(rep.mean_epe[t]);
    out += ",";
    if (t > 0) out += format_real(rep.step_energy[t - 1]);
    out += ",";
    if (t >= static_cast<std::size_t>(window_start)) out += format_real(rep.running_means[t - window_start]);
    out += "\n";
  }
  return out;
}

}  // namespace osmalign::io
