#include <gtest/gtest.h>

#include <fstream>

#include "binloc/service.hpp"
#include "pool_util.hpp"

using namespace binloc;
using binloc::testing::make_listening_pool;
using binloc::testing::scratch_dir;
using nlohmann::json;

namespace {

struct Fixture {
  std::filesystem::path dir;
  DatasetManifest pool;
  std::unique_ptr<Session> session;
  std::unique_ptr<ListeningService> service;
  std::unique_ptr<httplib::Client> client;

  explicit Fixture(const std::string& name, std::filesystem::path ui = {}) : dir(scratch_dir(name)) {
    pool = make_listening_pool(dir / "pool");
    session = std::make_unique<Session>(SessionConfig{}, pool, dir / "log.jsonl");
    service = std::make_unique<ListeningService>(*session, ui);
    const int port = service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  httplib::Result answer(std::size_t i, double az) {
    return client->Post("/api/trial/" + std::to_string(i) + "/response", json{{"azimuth_deg", az}}.dump(),
                        "application/json");
  }
};

}  // namespace

TEST(Service, SessionAndTrialMetadataHideTruth) {
  Fixture f("svc_meta");
  auto res = f.client->Get("/api/session");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto s = json::parse(res->body);
  EXPECT_EQ(s["answered"], 0);
  EXPECT_EQ(s["config"]["trial_count"], 36);
  EXPECT_EQ(s["config"]["allow_replay"], true);

  res = f.client->Get("/api/trial/5");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto t = json::parse(res->body);
  EXPECT_EQ(t["trial_index"], 5);
  EXPECT_EQ(t["audio_url"], "/api/trial/5/audio");
  EXPECT_FALSE(t.contains("true_azimuth_deg"));
  for (const char* leak : {"true_azimuth", "utterance", "snr", "stimulus", "features"})
    EXPECT_EQ(res->body.find(leak), std::string::npos) << leak;

  EXPECT_EQ(f.client->Get("/api/trial/36")->status, 404);
}

TEST(Service, AudioIsTheStimulusWav) {
  Fixture f("svc_audio");
  auto res = f.client->Get("/api/trial/0/audio");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "audio/wav");
  const auto wav = decode_wav(res->body);
  EXPECT_TRUE(wav.is_stereo());
  EXPECT_EQ(wav, read_wav(f.pool.root / f.session->trial(0)->stimulus_path));
}

TEST(Service, ResponseStatusCodes) {
  Fixture f("svc_codes");
  EXPECT_EQ(f.answer(0, 7.5)->status, 422);
  EXPECT_EQ(f.answer(0, 30.0)->status, 200);
  EXPECT_EQ(f.answer(0, 45.0)->status, 409);
  EXPECT_EQ(f.answer(400, 0.0)->status, 404);
  EXPECT_EQ(f.client->Post("/api/trial/1/response", "not json", "application/json")->status, 400);
  EXPECT_EQ(f.client->Post("/api/trial/1/response", "{}", "application/json")->status, 400);
  EXPECT_EQ(f.session->answered(), 1u);
  EXPECT_EQ(read_results_log(f.dir / "log.jsonl").size(), 1u);
}

TEST(Service, ResultsOnlyWhenComplete) {
  Fixture f("svc_results");
  EXPECT_EQ(f.client->Get("/api/results")->status, 409);
  for (const auto& t : f.session->trials()) ASSERT_EQ(f.answer(t.trial_index, t.true_azimuth_deg)->status, 200);
  auto res = f.client->Get("/api/results");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto body = json::parse(res->body);
  EXPECT_EQ(body["trials"].size(), 36u);
  for (const auto& b : body["methods"]["human"]["buckets"]) {
    EXPECT_EQ(b["count"], 12);
    EXPECT_EQ(b["mean_deg"], 0.0);
  }
}

TEST(Service, ServesUiDirectory) {
  const auto ui = scratch_dir("svc_ui_files");
  std::ofstream(ui / "index.html") << "<html>ok</html>";
  Fixture f("svc_ui", ui);
  auto res = f.client->Get("/index.html");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>ok</html>");
  EXPECT_THROW(ListeningService(*f.session, ui / "absent"), Error);
}

TEST(Service, BusyPortIsReported) {
  Fixture f("svc_busy");
  ListeningService second(*f.session);
  EXPECT_THROW(second.start("127.0.0.1", f.service->port()), Error);
}
