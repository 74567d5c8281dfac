#include <gtest/gtest.h>

#include <fstream>
#include <functional>

#include "osmalign/dataio.hpp"
#include "osmalign/pipeline.hpp"
#include "support/fixture.hpp"

using namespace osmalign;
using osmalign::testing::fixture_dir;
using osmalign::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

void copy_dir(const fs::path& from, const fs::path& to) {
  fs::remove_all(to);
  fs::copy(from, to, fs::copy_options::recursive);
}

void edit_json(const fs::path& p, const std::function<void(io::json&)>& f) {
  io::json j = io::read_json(p);
  f(j);
  io::write_file(p, io::canonical_dump(j));
}

}  // namespace

TEST(FormatReal, SixDecimals) {
  EXPECT_EQ(io::format_real(5.0), "5.000000");
  EXPECT_EQ(io::format_real(-0.0), "0.000000");
  EXPECT_EQ(io::format_real(-1e-9), "0.000000");
  EXPECT_EQ(io::format_real(0.015625), "0.015625");
  EXPECT_EQ(io::format_real(-12.5), "-12.500000");
  EXPECT_THROW(io::format_real(std::nan("")), InvalidArgument);
}

TEST(CanonicalDump, SortedKeysAndInlineArrays) {
  const io::json j = {{"b", 1}, {"a", {1.5, 2.0}}, {"c", {{"z", true}, {"y", "s"}}}, {"d", io::json::array()}};
  EXPECT_EQ(io::canonical_dump(j),
            "{\n"
            "  \"a\": [1.500000, 2.000000],\n"
            "  \"b\": 1,\n"
            "  \"c\": {\n"
            "    \"y\": \"s\",\n"
            "    \"z\": true\n"
            "  },\n"
            "  \"d\": []\n"
            "}\n");
}

TEST(Pgm, RoundTripAndFormat) {
  Channel ch(3, 2);
  ch.at(0, 0) = 1.0;
  ch.at(1, 0) = 0.5;
  ch.at(2, 1) = 0.2;
  const std::string bytes = io::encode_pgm(ch);
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  ASSERT_EQ(bytes.size(), 11u + 6u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 255);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 128);  // round(127.5)
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 51);
  const Channel back = io::decode_pgm(bytes, "mem");
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) EXPECT_EQ(back.level(i, j), ch.level(i, j));
  EXPECT_EQ(io::encode_pgm(back), bytes);
}

TEST(Pgm, MalformedRejected) {
  EXPECT_THROW(io::decode_pgm("P2\n1 1\n255\n0", "x"), ValidationError);
  EXPECT_THROW(io::decode_pgm("P5\n2 2\n255\n\x01", "x"), ValidationError);
  EXPECT_THROW(io::decode_pgm("P5\n1 1\n65535\n\x01\x02", "x"), ValidationError);
  EXPECT_THROW(io::decode_pgm("P5\nx 1\n255\n\x01", "x"), ValidationError);
}

TEST(Dataset, FixtureShape) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  EXPECT_EQ(ds.manifest.images.size(), 3u);
  EXPECT_EQ(ds.records.size(), 12u);
  EXPECT_EQ(ds.manifest.master_seed, 42u);
  for (const auto& im : ds.manifest.images) {
    EXPECT_EQ(ds.records_of(im.id).size(), 4u);
    EXPECT_EQ(ds.channels.at(im.id).footprint_evidence.width(), 512);
  }
}

TEST(Dataset, WriteTwiceIsByteIdentical) {
  const fs::path a = scratch_dir("ds_a"), b = scratch_dir("ds_b");
  build_dataset(osmalign::testing::fixture_config(), 2, a);
  build_dataset(osmalign::testing::fixture_config(), 2, b);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(io::read_file(e.path()), io::read_file(b / rel)) << rel;
  }
}

TEST(Dataset, LoadedValuesMatchGenerated) {
  const auto built = make_dataset(osmalign::testing::fixture_config(), 3);
  const io::Dataset ds = io::load_dataset(fixture_dir());
  ASSERT_EQ(ds.records.size(), built.dataset.records.size());
  for (std::size_t k = 0; k < ds.records.size(); ++k) {
    const auto &a = ds.records[k], &b = built.dataset.records[k];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.image_id, b.image_id);
    EXPECT_EQ(a.osm, b.osm);
    EXPECT_EQ(a.footprint, b.footprint);
    EXPECT_EQ(a.roof, b.roof);
    EXPECT_EQ(a.f_vec, b.f_vec);
    EXPECT_EQ(a.o_vec, b.o_vec);
    EXPECT_EQ(a.r_vec, b.r_vec);
  }
  for (const auto& [id, ch] : built.dataset.channels)
    for (int j = 0; j < ch.footprint_evidence.height(); ++j)
      for (int i = 0; i < ch.footprint_evidence.width(); ++i)
        ASSERT_EQ(ds.channels.at(id).footprint_evidence.level(i, j), ch.footprint_evidence.level(i, j));
}

TEST(Dataset, FloatsUseSixDecimals) {
  const std::string text = io::read_file(fixture_dir() / "annotations.json");
  EXPECT_NE(text.find(".000000"), std::string::npos);
  EXPECT_EQ(text.back(), '\n');
}

TEST(Dataset, ClosureViolationRejectedInStrictMode) {
  const fs::path d = fs::path(OSMALIGN_TEST_TMP) / "ds_bad_closure";
  copy_dir(fixture_dir(), d);
  edit_json(d / "annotations.json", [](io::json& j) {
    auto& r = j["annotations"][1]["r_vec"];
    r[0] = r[0].get<double>() + 0.01;
  });
  try {
    io::load_dataset(d);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.items().size(), 1u);
    EXPECT_NE(e.items()[0].find("id 1"), std::string::npos);
  }
  const io::Dataset lenient = io::load_dataset(d, true);
  EXPECT_EQ(lenient.records.size(), 11u);
  EXPECT_EQ(lenient.rejected.size(), 1u);
}

TEST(Dataset, MissingChannelFileIsIoError) {
  const fs::path d = fs::path(OSMALIGN_TEST_TMP) / "ds_missing_channel";
  copy_dir(fixture_dir(), d);
  fs::remove(d / io::channel_file(2, "roof_evidence"));
  EXPECT_THROW(io::load_dataset(d), IoError);
}

TEST(Dataset, WrongVersionRejected) {
  const fs::path d = fs::path(OSMALIGN_TEST_TMP) / "ds_version";
  copy_dir(fixture_dir(), d);
  edit_json(d / "manifest.json", [](io::json& j) { j["format_version"] = "2"; });
  EXPECT_THROW(io::load_dataset(d), ValidationError);
}

TEST(Dataset, UnknownImageAndShortPolygonRejected) {
  const fs::path d = fs::path(OSMALIGN_TEST_TMP) / "ds_bad_records";
  copy_dir(fixture_dir(), d);
  edit_json(d / "annotations.json", [](io::json& j) {
    j["annotations"][0]["image_id"] = 99;
    auto& fp = j["annotations"][5]["footprint"];
    fp.erase(fp.begin() + 2, fp.end());
  });
  try {
    io::load_dataset(d);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.items().size(), 2u);
  }
}

TEST(Dataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(io::load_dataset(fs::path(OSMALIGN_TEST_TMP) / "does_not_exist"), IoError);
}

TEST(Predictions, RoundTrip) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  io::PredictionFile pf = ground_truth_predictions(ds, {1.5, -2.25});
  pf.records[3].flags = {"window_boundary"};
  pf.records[4].trajectory = "traj.jsonl";
  pf.config = {{"seed", 3}};
  const fs::path p = scratch_dir("pred_rt") / "predictions.json";
  io::write_predictions(pf, p);
  const io::PredictionFile back = io::load_predictions(p, &ds);
  ASSERT_EQ(back.records.size(), pf.records.size());
  for (std::size_t k = 0; k < pf.records.size(); ++k) {
    EXPECT_EQ(back.records[k].id, pf.records[k].id);
    EXPECT_EQ(back.records[k].footprint, pf.records[k].footprint);
    EXPECT_EQ(back.records[k].roof, pf.records[k].roof);
    EXPECT_EQ(back.records[k].f_hat, pf.records[k].f_hat);
    EXPECT_EQ(back.records[k].o_hat, pf.records[k].o_hat);
    EXPECT_EQ(back.records[k].flags, pf.records[k].flags);
    EXPECT_EQ(back.records[k].trajectory, pf.records[k].trajectory);
  }
  EXPECT_EQ(back.config, pf.config);
  EXPECT_EQ(io::encode_predictions(back), io::read_file(p));
}

TEST(Predictions, MissingIdNamed) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  io::PredictionFile pf = ground_truth_predictions(ds);
  pf.records.erase(pf.records.begin() + 7);
  const fs::path p = scratch_dir("pred_missing") / "predictions.json";
  io::write_predictions(pf, p);
  try {
    io::load_predictions(p, &ds);
    FAIL() << "expected IdMismatchError";
  } catch (const IdMismatchError& e) {
    ASSERT_EQ(e.items().size(), 1u);
    EXPECT_EQ(e.items()[0], "missing id 7");
    EXPECT_NE(std::string(e.what()).find("missing id 7"), std::string::npos);
  }
}

TEST(Predictions, ShortPolygonsRejectedById) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  io::PredictionFile pf = ground_truth_predictions(ds);
  pf.records[2].footprint.vertices.clear();
  pf.records[9].roof.vertices.resize(2);
  const fs::path p = scratch_dir("pred_empty") / "predictions.json";
  io::write_predictions(pf, p);
  try {
    io::load_predictions(p, &ds);
    FAIL() << "expected IdMismatchError";
  } catch (const IdMismatchError& e) {
    EXPECT_EQ(e.items(), (std::vector<std::string>{"2", "9"}));
  }
}

TEST(Predictions, GroundTruthCopyScoresPerfect) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  const fs::path p = scratch_dir("pred_gt") / "predictions.json";
  io::write_predictions(ground_truth_predictions(ds), p);
  const Report r = evaluate(ds, io::load_predictions(p, &ds));
  EXPECT_EQ(r.mf, 1.0);
  EXPECT_EQ(r.mi, 1.0);
  EXPECT_EQ(r.mean_epe_footprint, 0.0);
  EXPECT_EQ(r.ale, 0.0);
}

TEST(Predictions, ShiftedCopyHasEpeFive) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  const Report r = evaluate(ds, ground_truth_predictions(ds, {5, 0}));
  EXPECT_NEAR(r.mean_epe_footprint, 5.0, 1e-9);
  EXPECT_LT(r.footprint.iou, 1.0);
}

TEST(Metrics, CsvAndJsonAreCanonical) {
  const io::Dataset ds = io::load_dataset(fixture_dir());
  const Report r = evaluate(ds, ground_truth_predictions(ds));
  const std::string csv = io::metrics_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "roof_f1,roof_precision,roof_recall,roof_iou,footprint_f1,footprint_precision,footprint_recall,"
            "footprint_iou,mf,mi,mean_epe_roof,mean_epe_footprint,ale,instances");
  EXPECT_NE(csv.find("1.000000,1.000000"), std::string::npos);
  const io::json j = io::json::parse(io::encode_metrics(r));
  EXPECT_EQ(j.at("format_version"), "1");
  EXPECT_EQ(io::encode_metrics(r), io::encode_metrics(r));
}

TEST(Trajectories, LinesRoundTrip) {
  Trajectory tr;
  tr.weights = {1.0, 0.5};
  tr.raw_offsets = {{{1, 2}, {3, 4}}, {{0.5, 0.25}, {0, -1}}};
  tr.centroids = {{{0, 0}, {10, 10}}, {{1, 2}, {13, 14}}, {{1.25, 2.125}, {13, 13.5}}};
  tr.displacements = {{{0, 0}, {0, 0}}, {{1, 2}, {3, 4}}, {{1.25, 2.125}, {3, 3.5}}};
  const std::string text = io::encode_trajectory_lines(tr, 0, 7, {100, 101});
  const auto rows = io::parse_trajectory_lines(text, "mem");
  ASSERT_EQ(rows.size(), 6u);  // (T + 1) x instances
  std::vector<std::vector<std::uint64_t>> ids;
  std::vector<std::uint64_t> run_of;
  const auto runs = io::trajectories_from_rows(rows, ids, run_of);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(ids[0], (std::vector<std::uint64_t>{100, 101}));
  EXPECT_EQ(run_of[0], 0u);
  EXPECT_EQ(runs[0].weights, tr.weights);
  EXPECT_EQ(runs[0].raw_offsets, tr.raw_offsets);
  EXPECT_EQ(runs[0].centroids, tr.centroids);
}

TEST(Trajectories, MalformedLineNamed) {
  try {
    io::parse_trajectory_lines("{\"t\": 0}\nnot json\n", "dump.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dump.jsonl"), std::string::npos);
  }
}
