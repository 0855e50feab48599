#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "binloc/cli.hpp"
#include "pool_util.hpp"

using namespace binloc;
using binloc::testing::scratch_dir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "binloc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> synth_args(const std::filesystem::path& out) {
  return {"synth", "--out", out.string(), "--count", "12", "--duration", "0.5", "--noise-bank", "1",
          "--seed", "7", "--threads", "2"};
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"synth", "--count", "many"}).code, 1);
  EXPECT_EQ(run({"train"}).code, 1);  // --data is required
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("synth"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const auto r = run({"eval", "--data", "/nonexistent/manifest.tsv"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run({"describe", "--model", "huge"}).code, 2);
}

TEST(Cli, DescribePrintsParameterCount) {
  const auto r = run({"describe"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("total parameters: 96634"), std::string::npos) << r.out;
  const auto tmpl = run({"describe", "--config-template"});
  EXPECT_EQ(tmpl.code, 0);
  EXPECT_NE(tmpl.out.find("synth.count=100"), std::string::npos);
  EXPECT_NE(tmpl.out.find("# synth.snr-values=\"\""), std::string::npos);
}

TEST(Cli, ConfigTemplateRoundTrips) {
  const auto dir = scratch_dir("cli_template");
  std::string text = run({"describe", "--config-template"}).out;
  for (auto [from, to] : {std::pair<std::string, std::string>{"synth.count=100", "synth.count=2"},
                          {"synth.duration=2", "synth.duration=0.5"},
                          {"synth.noise-bank=8", "synth.noise-bank=1"}}) {
    const auto pos = text.find(from);
    ASSERT_NE(pos, std::string::npos) << from;
    text.replace(pos, from.size(), to);
  }
  std::ofstream(dir / "t.ini") << text;
  const auto r = run({"--config", (dir / "t.ini").string(), "synth", "--out", (dir / "d").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(dir / "d" / "manifest.tsv");
  EXPECT_EQ(m.records.size(), 2u);
  EXPECT_TRUE(m.header["config"]["snr_values_db"].empty());
}

TEST(Cli, SynthIsReproducibleAndSeedAfterSubcommandWorks) {
  const auto dir = scratch_dir("cli_synth");
  ASSERT_EQ(run(synth_args(dir / "a")).code, 0);
  auto args = synth_args(dir / "b");
  args.back() = "1";  // thread count must not matter
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.tsv"), slurp(dir / "b" / "manifest.tsv"));
  EXPECT_EQ(slurp(dir / "a" / "features" / "rec_000003.gcc"), slurp(dir / "b" / "features" / "rec_000003.gcc"));
  const auto m = read_manifest(dir / "a" / "manifest.tsv");
  EXPECT_EQ(m.header["config"]["seed"], 7);
  EXPECT_EQ(m.header["config"]["duration_s"], 0.5);
}

TEST(Cli, ConfigFileSuppliesDefaults) {
  const auto dir = scratch_dir("cli_config");
  std::ofstream(dir / "run.ini") << "seed=3\n[synth]\ncount=5\nduration=0.5\nnoise-bank=1\nno-ear-noise=true\n";
  const auto r = run({"--config", (dir / "run.ini").string(), "synth", "--out", (dir / "d").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(dir / "d" / "manifest.tsv");
  EXPECT_EQ(m.records.size(), 5u);
  EXPECT_EQ(m.header["config"]["seed"], 3);
  EXPECT_EQ(m.header["config"]["ear_noise"], false);
}

TEST(Cli, TrainEvalLocalizeProbe) {
  const auto dir = scratch_dir("cli_pipeline");
  ASSERT_EQ(run(synth_args(dir / "data")).code, 0);
  const auto manifest = (dir / "data" / "manifest.tsv").string();
  const auto ckpt = (dir / "model.ckpt").string();
  auto tr = run({"train", "--data", manifest, "--out", ckpt, "--model", "tiny", "--epochs", "1", "--log",
                 (dir / "train.csv").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("best epoch"), std::string::npos);
  const auto log = slurp(dir / "train.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);  // header, epoch 0, epoch 1

  const auto ev = run({"eval", "--data", manifest, "--checkpoint", ckpt, "--method", "crn", "--method", "srp",
                       "--out", (dir / "report").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  std::istringstream records(slurp(dir / "report" / "records.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(records, l);) ++lines;
  const auto m = read_manifest(manifest);
  EXPECT_EQ(lines, 1 + 2 * m.in_split(Split::test).size());
  const auto summary = nlohmann::json::parse(slurp(dir / "report" / "summary.json"));
  EXPECT_TRUE(summary["methods"].contains("crn"));
  EXPECT_TRUE(summary["methods"].contains("srp"));
  EXPECT_EQ(run({"eval", "--data", manifest, "--method", "crn"}).code, 2);  // no checkpoint

  const auto src = binloc::testing::white_noise(16000, 3, 0.05);
  auto scene = spatialize(AudioBuffer::mono(16000, src), synth_head_brir(45.0, {}, {}, 16000, 0));
  scene.resize(src.size());
  write_wav(scene, dir / "scene.wav", WavEncoding::float32);
  const auto loc = run({"localize", (dir / "scene.wav").string(), "--checkpoint", ckpt, "--no-ear-noise"});
  ASSERT_EQ(loc.code, 0) << loc.err;
  EXPECT_NE(loc.out.find("crn "), std::string::npos);
  const auto srp_pos = loc.out.find("srp ");
  ASSERT_NE(srp_pos, std::string::npos);
  EXPECT_NEAR(std::stod(loc.out.substr(srp_pos + 4)), 45.0, 3.0);

  const auto probe = run({"probe", (dir / "scene.wav").string(), "--reference", "45", "--checkpoint", ckpt});
  ASSERT_EQ(probe.code, 0) << probe.err;
  EXPECT_EQ(probe.out.rfind("reference 45 estimate ", 0), 0u);
  EXPECT_EQ(run({"probe", (dir / "scene.wav").string(), "--reference", "45", "--checkpoint", ckpt, "--transform",
                 "flip"}).code,
            2);
}

TEST(Cli, CompareFromResultsLog) {
  const auto dir = scratch_dir("cli_compare");
  const auto pool = binloc::testing::make_listening_pool(dir / "pool");
  {
    Session s({}, pool, dir / "log.jsonl");
    for (const auto& t : s.trials()) s.respond(t.trial_index, 0.0);
  }
  const auto r = run({"compare", "--log", (dir / "log.jsonl").string(), "--pool", (dir / "pool" / "manifest.tsv").string(),
                      "--out", (dir / "cmp").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(slurp(dir / "cmp" / "summary.json"));
  EXPECT_EQ(summary["methods"]["human"]["count"], 36);
  EXPECT_EQ(summary["methods"]["srp"]["count"], 36);
}
