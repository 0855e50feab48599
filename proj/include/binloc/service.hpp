#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <thread>

#include "binloc/core.hpp"
#include "binloc/eval.hpp"
#include "binloc/listening.hpp"
#include "httplib.h"
#include "json.hpp"

namespace binloc {

/// HTTP front end for one listening-test Session.
///   GET  /api/session               config + progress
///   GET  /api/trial/{i}             trial metadata (no ground truth)
///   GET  /api/trial/{i}/audio       stimulus WAV
///   POST /api/trial/{i}/response    {azimuth_deg, response_time_ms} -> 200 | 404 | 409 | 422
///   GET  /api/results               per-condition summary once complete, else 409
class ListeningService {
 public:
  explicit ListeningService(Session& session, std::filesystem::path ui_dir = {}) : session_(session) {
    // SO_REUSEADDR only: httplib's default SO_REUSEPORT would let a second server share a busy port
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
    if (!ui_dir.empty() && !server_.set_mount_point("/", ui_dir.string()))
      throw Error("serve: ui directory not found: " + ui_dir.string());
  }
  ~ListeningService() { stop(); }
  ListeningService(const ListeningService&) = delete;
  ListeningService& operator=(const ListeningService&) = delete;

  /// Binds (port 0 = any free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw Error("serve: cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Binds and serves on the calling thread until stop() is called elsewhere.
  void run(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw Error("serve: cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
  }

  std::optional<TrialRecord> lookup(const httplib::Request& req, httplib::Response& res) const {
    std::size_t i = 0;
    try {
      i = std::stoul(req.matches[1].str());
    } catch (const std::exception&) {
      send_error(res, 404, "no such trial");
      return std::nullopt;
    }
    auto t = session_.trial(i);
    if (!t) send_error(res, 404, "no such trial");
    return t;
  }

  void routes() {
    server_.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, session_.progress_json());
    });

    server_.Get(R"(/api/trial/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto t = lookup(req, res);
      if (!t) return;
      nlohmann::json body = {{"trial_index", t->trial_index},
                             {"trial_count", session_.config().trial_count},
                             {"audio_url", "/api/trial/" + std::to_string(t->trial_index) + "/audio"},
                             {"answered", t->answered()},
                             {"allow_replay", session_.config().allow_replay},
                             {"azimuth_quantization_deg", session_.config().azimuth_quantization_deg}};
      send_json(res, 200, body);
    });

    server_.Get(R"(/api/trial/(\d+)/audio)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto t = lookup(req, res);
      if (!t) return;
      if (t->stimulus_path.empty()) return send_error(res, 404, "stimulus has no audio (build the pool with write_audio)");
      std::ifstream in(session_.pool_root() / t->stimulus_path, std::ios::binary);
      if (!in) return send_error(res, 404, "stimulus file missing: " + t->stimulus_path);
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      res.status = 200;
      res.set_content(std::move(bytes), "audio/wav");
    });

    server_.Post(R"(/api/trial/(\d+)/response)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto t = lookup(req, res);
      if (!t) return;
      double azimuth = 0.0;
      std::optional<double> rt;
      try {
        const auto body = nlohmann::json::parse(req.body);
        azimuth = body.at("azimuth_deg").get<double>();
        if (body.contains("response_time_ms") && !body["response_time_ms"].is_null())
          rt = body["response_time_ms"].get<double>();
      } catch (const std::exception& e) {
        return send_error(res, 400, std::string("bad request body: ") + e.what());
      }
      switch (session_.respond(t->trial_index, azimuth, rt)) {
        case RespondStatus::ok:
          return send_json(res, 200, {{"ok", true}, {"answered", session_.answered()}, {"next_trial", session_.next_trial()}});
        case RespondStatus::not_quantized:
          return send_error(res, 422,
                            "azimuth " + format_number(azimuth) + " is not a multiple of " +
                                format_number(session_.config().azimuth_quantization_deg) + " within [-90, 90]");
        case RespondStatus::already_answered:
          return send_error(res, 409, "trial already answered");
        case RespondStatus::invalid_trial:
          return send_error(res, 404, "no such trial");
      }
    });

    server_.Get("/api/results", [this](const httplib::Request&, httplib::Response& res) {
      if (!session_.complete()) return send_error(res, 409, "session not complete");
      std::vector<EvalRecord> records;
      nlohmann::json trials = nlohmann::json::array();
      for (const auto& t : session_.trials()) {
        records.push_back({t.utterance_id, "human", t.true_azimuth_deg, *t.response_azimuth_deg,
                           localization_error(t.true_azimuth_deg, *t.response_azimuth_deg), t.snr_db});
        trials.push_back(to_log_json(session_.config(), t));
      }
      auto body = to_json(summarize(std::move(records), listening_bucket_edges()));
      body["trials"] = std::move(trials);
      send_json(res, 200, body);
    });
  }

  Session& session_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace binloc
