#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "binloc/eval.hpp"
#include "binloc/scene.hpp"
#include "test_util.hpp"

using namespace binloc;
using binloc::testing::scratch_dir;
using binloc::testing::white_noise;

namespace {

// 181 test records at every integer azimuth, SNR cycling over -25..25 in 5 dB steps.
DatasetManifest integer_azimuth_manifest(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  DatasetManifest m;
  m.root = dir;
  m.config_hash = "feedface";
  GccFeature f;
  f.frames = 2;
  f.max_lag = 2;
  f.values.assign(10, 0.0);
  for (int az = -90; az <= 90; ++az) {
    DatasetRecord r;
    char name[32];
    std::snprintf(name, sizeof(name), "features/r%03d.gcc", az + 90);
    r.path = name;
    r.azimuth_deg = az;
    r.snr_db = -25.0 + 5.0 * ((az + 90) % 11);
    r.split = Split::test;
    write_feature_file(f, direction_from_azimuth(az), dir / r.path);
    m.records.push_back(r);
  }
  m.records.front().split = Split::train;  // excluded from the test split
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(LocalizationError, DefinitionAndRange) {
  EXPECT_EQ(localization_error(30.0, -10.0), 40.0);
  EXPECT_EQ(localization_error(-90.0, 90.0), 180.0);
  EXPECT_EQ(localization_error(12.5, 12.5), 0.0);
  EXPECT_THROW(localization_error(95.0, 0.0), Error);
  EXPECT_THROW(localization_error(0.0, -91.0), Error);
  EXPECT_THROW(localization_error(std::nan(""), 0.0), Error);
}

TEST(Buckets, DefaultEdgesAndClamping) {
  const auto e = default_bucket_edges();
  ASSERT_EQ(e.size(), 12u);
  EXPECT_EQ(e.front(), -27.5);
  EXPECT_EQ(e.back(), 27.5);
  EXPECT_EQ(bucket_index(-25.0, e), 0u);
  EXPECT_EQ(bucket_index(-22.5, e), 1u);
  EXPECT_EQ(bucket_index(0.0, e), 5u);
  EXPECT_EQ(bucket_index(25.0, e), 10u);
  EXPECT_EQ(bucket_index(-40.0, e), 0u);
  EXPECT_EQ(bucket_index(40.0, e), 10u);
  EXPECT_THROW(validate_edges({1.0}), Error);
  EXPECT_THROW(validate_edges({1.0, 1.0}), Error);
}

TEST(Buckets, StatsAgainstHandValues) {
  const auto s = bucket_stats({4.0, 1.0, 3.0, 2.0}, -2.5, 2.5);
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(*s.mean, 2.5);
  EXPECT_DOUBLE_EQ(*s.median, 2.5);
  EXPECT_DOUBLE_EQ(*s.std, std::sqrt(1.25));
  EXPECT_EQ(s.centre(), 0.0);
  const auto odd = bucket_stats({5.0, 1.0, 9.0}, 0, 1);
  EXPECT_EQ(*odd.median, 5.0);
  const auto empty = bucket_stats({}, 0, 1);
  EXPECT_FALSE(empty.mean || empty.median || empty.std);
}

TEST(Evaluate, OracleIsZeroAndConstantMatchesMeanAbsAzimuth) {
  const auto dir = scratch_dir("eval_basic");
  const auto m = integer_azimuth_manifest(dir);
  const auto report = evaluate({{"oracle", oracle_estimator()}, {"zero", constant_estimator(0.0)}}, m);
  ASSERT_EQ(report.records.size(), 2u * 180u);
  EXPECT_EQ(report.methods, (std::vector<std::string>{"oracle", "zero"}));
  EXPECT_EQ(report.records[0].method, "oracle");
  EXPECT_EQ(report.records[1].method, "zero");
  EXPECT_EQ(report.records[0].utterance_id, report.records[1].utterance_id);
  double oracle_sum = 0.0, zero_sum = 0.0, expected = 0.0;
  for (const auto& r : report.records) (r.method == "oracle" ? oracle_sum : zero_sum) += r.abs_error_deg;
  for (int az = -89; az <= 90; ++az) expected += std::abs(az);
  EXPECT_EQ(oracle_sum, 0.0);
  EXPECT_NEAR(zero_sum / 180.0, expected / 180.0, 1e-12);
  EXPECT_NEAR(zero_sum / 180.0, 45.0, 0.5);
  EXPECT_EQ(report.provenance["dataset_config_hash"], "feedface");
  EXPECT_EQ(report.provenance["records"], 180);
}

TEST(Evaluate, BucketsPartitionTheRecords) {
  const auto dir = scratch_dir("eval_partition");
  const auto m = integer_azimuth_manifest(dir);
  const auto report = evaluate({{"zero", constant_estimator(0.0)}}, m);
  std::size_t total = 0;
  double weighted = 0.0;
  for (const auto& b : report.buckets.at("zero")) {
    total += b.count;
    if (b.mean) weighted += *b.mean * static_cast<double>(b.count);
  }
  EXPECT_EQ(total, report.records.size());
  double direct = 0.0;
  for (const auto& r : report.records) direct += r.abs_error_deg;
  EXPECT_NEAR(weighted, direct, 1e-9);
}

TEST(Evaluate, EmptyBucketsBecomeNullsInJson) {
  std::vector<EvalRecord> recs{{"a", "m1", 10, 0, 10, -15.0}, {"b", "m1", 20, 0, 20, -15.0}, {"a", "m2", 10, 5, 5, 15.0}};
  const auto report = summarize(recs, listening_bucket_edges());
  const auto j = to_json(report);
  EXPECT_TRUE(j["methods"]["m1"]["buckets"][1]["mean_deg"].is_null());
  EXPECT_TRUE(j["methods"]["m1"]["buckets"][1]["std_deg"].is_null());
  EXPECT_EQ(j["methods"]["m1"]["buckets"][0]["mean_deg"], 15.0);
  EXPECT_EQ(j["methods"]["m2"]["count"], 1);

  const auto dir = scratch_dir("eval_emit");
  emit_report(report, dir);
  const auto plot = slurp(dir / "plot_data.csv");
  std::istringstream in(plot);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u + 2u * 3u);  // header + methods x buckets
  EXPECT_EQ(lines[0], "bucket_db,method,mean_deg,std_deg,count");
  EXPECT_EQ(lines[1], "-15,m1,15,5,2");
  EXPECT_EQ(lines[2], "0,m1,,,0");
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "summary.json")), j);
}

TEST(Evaluate, RecordsCsvRoundTrip) {
  std::vector<EvalRecord> recs{{"u1", "crn", -12.25, 3.5, 15.75, -7.0},
                               {"u2", "srp", 0.1, 0.2, 0.1, std::nan("")}};
  std::stringstream s;
  write_records_csv(recs, s);
  const auto back = read_records_csv(s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].utterance_id, "u1");
  EXPECT_EQ(back[0].true_azimuth_deg, -12.25);
  EXPECT_EQ(back[1].estimated_azimuth_deg, 0.2);
  EXPECT_EQ(back[1].abs_error_deg, 0.1);
  EXPECT_TRUE(std::isnan(back[1].snr_db));
}

TEST(Evaluate, Errors) {
  const auto dir = scratch_dir("eval_errors");
  const auto m = integer_azimuth_manifest(dir);
  EXPECT_THROW(evaluate({}, m), Error);
  EXPECT_THROW(evaluate({{"c", constant_estimator(0.0)}}, m, default_bucket_edges(), Split::val), Error);
  EXPECT_THROW(evaluate({{"bad", constant_estimator(120.0)}}, m), Error);
}

TEST(Spearman, KnownCases) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {9, 4, 1, 0}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // ties: ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4)
  EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
  EXPECT_EQ(average_ranks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_THROW(spearman({1}, {1}), Error);
}

TEST(Monotonicity, PassesOnDecreasingErrors) {
  std::vector<EvalRecord> recs;
  for (double snr : {-25.0, -15.0, -5.0, 5.0, 15.0, 25.0}) recs.push_back({"x", "m", 0, 0, 40.0 - snr, snr});
  const auto report = summarize(recs, default_bucket_edges());
  const auto r = monotonicity_check(report, "m");
  EXPECT_EQ(r.buckets, 6u);
  EXPECT_DOUBLE_EQ(r.rho, -1.0);
  EXPECT_TRUE(r.pass);
  recs.push_back({"y", "m", 0, 0, 100.0, 25.0});
  recs.push_back({"y", "m", 0, 0, 100.0, 15.0});
  EXPECT_FALSE(monotonicity_check(summarize(recs, default_bucket_edges()), "m").pass);
  EXPECT_THROW(monotonicity_check(report, "absent"), Error);
}

TEST(Probe, SwapMirrorsAndDioticCentres) {
  const auto src = white_noise(16000, 9);
  auto scene = spatialize(AudioBuffer::mono(16000, src), synth_head_brir(40.0, {}, {}, 16000, 0));
  scene.resize(src.size());
  const auto srp = srp_estimator();
  ProbeOptions opts;
  opts.with_ear_noise = false;
  opts.method = "srp";
  const auto plain = cue_preservation_probe(scene, 40.0, srp, opts);
  EXPECT_LE(plain.abs_error_deg, 3.0);
  const auto swapped = cue_preservation_probe(channel_swapped(scene), 40.0, srp, opts);
  EXPECT_NEAR(swapped.estimated_azimuth_deg, -plain.estimated_azimuth_deg, 1e-9);
  const auto mono = cue_preservation_probe(diotic(scene), 40.0, srp, opts);
  EXPECT_EQ(mono.estimated_azimuth_deg, 0.0);
  EXPECT_EQ(mono.abs_error_deg, 40.0);
  ProbeOptions noisy;
  EXPECT_THROW(cue_preservation_probe(scene, 40.0, srp, noisy), Error);
}

TEST(Report, TableListsEveryBucket) {
  std::vector<EvalRecord> recs{{"a", "crn", 0, 1, 1, 0.0}};
  const auto text = format_report_table(summarize(recs, default_bucket_edges()));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 12);
  EXPECT_NE(text.find("crn_mean"), std::string::npos);
}
