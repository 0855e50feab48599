#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "binloc/core.hpp"
#include "binloc/dataset.hpp"
#include "binloc/eval.hpp"
#include "json.hpp"

namespace binloc {

struct SessionConfig {
  std::string participant_id = "anonymous";
  std::size_t trial_count = 36;
  std::vector<double> snr_conditions_db{-15.0, 0.0, 15.0};
  double azimuth_quantization_deg = 15.0;
  std::uint64_t seed = 0;
  bool allow_replay = true;

  void validate() const {
    if (snr_conditions_db.empty()) throw Error("session: no SNR conditions");
    if (trial_count == 0 || trial_count % snr_conditions_db.size() != 0)
      throw Error("session: trial_count " + std::to_string(trial_count) + " is not divisible by the " +
                  std::to_string(snr_conditions_db.size()) + " SNR conditions");
    const double q = azimuth_quantization_deg;
    if (!(q > 0.0) || std::abs(180.0 / q - std::round(180.0 / q)) > 1e-9)
      throw Error("session: azimuth quantization must divide 180");
  }

  bool on_grid(double azimuth_deg) const {
    if (!(azimuth_deg >= -90.0 && azimuth_deg <= 90.0)) return false;
    const double k = azimuth_deg / azimuth_quantization_deg;
    return std::abs(k - std::round(k)) < 1e-9;
  }
};

inline void to_json(nlohmann::json& j, const SessionConfig& c) {
  j = {{"participant_id", c.participant_id},
       {"trial_count", c.trial_count},
       {"snr_conditions_db", c.snr_conditions_db},
       {"azimuth_quantization_deg", c.azimuth_quantization_deg},
       {"seed", c.seed},
       {"allow_replay", c.allow_replay}};
}

struct TrialRecord {
  std::size_t trial_index = 0;
  std::string utterance_id;
  std::string stimulus_path;  // audio, relative to the pool manifest
  std::string feature_path;   // cached features, relative to the pool manifest
  double true_azimuth_deg = 0.0;
  double snr_db = 0.0;
  std::optional<double> response_azimuth_deg;
  std::optional<double> response_time_ms;

  bool answered() const { return response_azimuth_deg.has_value(); }
};

/// Log line for an answered trial.
inline nlohmann::json to_log_json(const SessionConfig& cfg, const TrialRecord& t) {
  return {{"participant_id", cfg.participant_id},
          {"trial_index", t.trial_index},
          {"utterance_id", t.utterance_id},
          {"stimulus", t.stimulus_path},
          {"features", t.feature_path},
          {"true_azimuth_deg", t.true_azimuth_deg},
          {"snr_db", t.snr_db},
          {"response_azimuth_deg", *t.response_azimuth_deg},
          {"response_time_ms", t.response_time_ms ? nlohmann::json(*t.response_time_ms) : nlohmann::json(nullptr)}};
}

inline TrialRecord trial_from_log_json(const nlohmann::json& j) {
  TrialRecord t;
  t.trial_index = j.at("trial_index").get<std::size_t>();
  t.utterance_id = j.at("utterance_id").get<std::string>();
  t.stimulus_path = j.value("stimulus", "");
  t.feature_path = j.value("features", "");
  t.true_azimuth_deg = j.at("true_azimuth_deg").get<double>();
  t.snr_db = j.at("snr_db").get<double>();
  t.response_azimuth_deg = j.at("response_azimuth_deg").get<double>();
  if (j.contains("response_time_ms") && !j["response_time_ms"].is_null())
    t.response_time_ms = j["response_time_ms"].get<double>();
  return t;
}

struct LoggedTrial {
  std::string participant_id;
  TrialRecord trial;
};

/// Every answered trial in a results log, in file order. Malformed lines (for
/// example a torn final write) are reported and skipped.
inline std::vector<LoggedTrial> read_results_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("results log: cannot open " + path.string());
  std::vector<LoggedTrial> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.value("participant_id", ""), trial_from_log_json(j)});
    } catch (const std::exception& e) {
      warn("results log " + path.string() + ": skipping malformed line " + std::to_string(line_no));
    }
  }
  return out;
}

/// Picks trial_count / conditions stimuli per condition from the pool (any split),
/// then shuffles the combined list. Pool records must sit on the azimuth grid.
inline std::vector<TrialRecord> allocate_trials(const SessionConfig& cfg, const DatasetManifest& pool) {
  cfg.validate();
  const std::size_t per = cfg.trial_count / cfg.snr_conditions_db.size();
  std::vector<TrialRecord> trials;
  for (std::size_t c = 0; c < cfg.snr_conditions_db.size(); ++c) {
    std::vector<const DatasetRecord*> candidates;
    for (const auto& r : pool.records)
      if (std::abs(r.snr_db - cfg.snr_conditions_db[c]) < 1e-6 && cfg.on_grid(r.azimuth_deg))
        candidates.push_back(&r);
    if (candidates.size() < per)
      throw Error("session: insufficient stimuli for SNR " + format_number(cfg.snr_conditions_db[c]) + " dB: need " +
                  std::to_string(per) + ", pool has " + std::to_string(candidates.size()));
    std::sort(candidates.begin(), candidates.end(), [](const auto* a, const auto* b) { return a->id() < b->id(); });
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xc0 + c));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (std::size_t k = 0; k < per; ++k) {
      TrialRecord t;
      t.utterance_id = candidates[k]->id();
      t.stimulus_path = candidates[k]->audio_path;
      t.feature_path = candidates[k]->path;
      t.true_azimuth_deg = candidates[k]->azimuth_deg;
      t.snr_db = cfg.snr_conditions_db[c];
      trials.push_back(std::move(t));
    }
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xd0));
  std::shuffle(trials.begin(), trials.end(), rng);
  for (std::size_t i = 0; i < trials.size(); ++i) trials[i].trial_index = i;
  return trials;
}

enum class RespondStatus { ok, invalid_trial, not_quantized, already_answered };

/// One participant's session. Each accepted response is appended to the results log
/// and flushed before respond() returns; constructing a session over an existing log
/// restores its answers.
class Session {
 public:
  Session(SessionConfig config, const DatasetManifest& pool, std::filesystem::path log_path)
      : config_(std::move(config)), log_path_(std::move(log_path)), pool_root_(pool.root) {
    trials_ = allocate_trials(config_, pool);
    if (std::filesystem::exists(log_path_)) replay();
    log_.open(log_path_, std::ios::app);
    if (!log_) throw Error("session: cannot open results log " + log_path_.string());
  }

  const SessionConfig& config() const { return config_; }
  const std::filesystem::path& pool_root() const { return pool_root_; }
  const std::filesystem::path& log_path() const { return log_path_; }

  std::vector<TrialRecord> trials() const {
    std::lock_guard lock(mutex_);
    return trials_;
  }
  std::optional<TrialRecord> trial(std::size_t i) const {
    std::lock_guard lock(mutex_);
    if (i >= trials_.size()) return std::nullopt;
    return trials_[i];
  }
  std::size_t answered() const {
    std::lock_guard lock(mutex_);
    return count_answered();
  }
  bool complete() const { return answered() == config_.trial_count; }
  /// First unanswered trial, or trial_count when the session is complete.
  std::size_t next_trial() const {
    std::lock_guard lock(mutex_);
    for (const auto& t : trials_)
      if (!t.answered()) return t.trial_index;
    return trials_.size();
  }

  RespondStatus respond(std::size_t i, double azimuth_deg, std::optional<double> response_time_ms = {}) {
    std::lock_guard lock(mutex_);
    if (i >= trials_.size()) return RespondStatus::invalid_trial;
    if (!config_.on_grid(azimuth_deg)) return RespondStatus::not_quantized;
    if (trials_[i].answered()) return RespondStatus::already_answered;
    trials_[i].response_azimuth_deg = azimuth_deg;
    trials_[i].response_time_ms = response_time_ms;
    log_ << to_log_json(config_, trials_[i]).dump() << '\n';
    log_.flush();
    if (!log_) throw Error("session: failed to append to results log " + log_path_.string());
    return RespondStatus::ok;
  }

  nlohmann::json progress_json() const {
    return {{"config", config_}, {"answered", answered()}, {"next_trial", next_trial()}, {"complete", complete()}};
  }

 private:
  std::size_t count_answered() const {
    return static_cast<std::size_t>(std::count_if(trials_.begin(), trials_.end(), [](const auto& t) { return t.answered(); }));
  }

  void replay() {
    for (const auto& entry : read_results_log(log_path_)) {
      if (entry.participant_id != config_.participant_id) continue;
      const auto& t = entry.trial;
      if (t.trial_index >= trials_.size() || trials_[t.trial_index].utterance_id != t.utterance_id)
        throw Error("session: results log " + log_path_.string() +
                    " does not match this session's trial allocation (different seed or pool?)");
      auto& slot = trials_[t.trial_index];
      if (slot.answered()) continue;  // first answer wins
      slot.response_azimuth_deg = t.response_azimuth_deg;
      slot.response_time_ms = t.response_time_ms;
    }
  }

  SessionConfig config_;
  std::filesystem::path log_path_;
  std::filesystem::path pool_root_;
  std::vector<TrialRecord> trials_;
  std::ofstream log_;
  mutable std::mutex mutex_;
};

/// Mean error of a uniformly random response against a uniformly random truth, both
/// on the quantized frontal grid (exact enumeration over all grid pairs).
inline double random_response_expected_error(double quantization_deg = 15.0) {
  std::vector<double> grid;
  for (double a = -90.0; a <= 90.0 + 1e-9; a += quantization_deg) grid.push_back(a);
  double sum = 0.0;
  for (double t : grid)
    for (double r : grid) sum += std::abs(t - r);
  return sum / static_cast<double>(grid.size() * grid.size());
}

/// Human, model and SRP errors on the same stimuli. Human records come from the log
/// (first answer per participant and trial); model and SRP run on the stimuli's
/// cached features. Empty estimators are skipped.
inline EvalReport compare_human_model(const std::vector<LoggedTrial>& log, const DatasetManifest& pool,
                                      const FeatureEstimator& model, const FeatureEstimator& srp,
                                      const std::vector<double>& edges = listening_bucket_edges()) {
  if (log.empty()) throw Error("compare_human_model: empty results log");
  std::map<std::string, const DatasetRecord*> by_id;
  for (const auto& r : pool.records) by_id[r.id()] = &r;
  std::map<std::pair<std::string, std::size_t>, bool> seen;
  std::vector<EvalRecord> records;
  std::map<std::string, GccFeature> cache;
  for (const auto& entry : log) {
    const auto& t = entry.trial;
    if (!seen.emplace(std::make_pair(entry.participant_id, t.trial_index), true).second) continue;
    const std::string uid = entry.participant_id + "/" + t.utterance_id;
    records.push_back({uid, "human", t.true_azimuth_deg, *t.response_azimuth_deg,
                       localization_error(t.true_azimuth_deg, *t.response_azimuth_deg), t.snr_db});
    if (!model && !srp) continue;
    const auto it = by_id.find(t.utterance_id);
    if (it == by_id.end()) throw Error("compare_human_model: stimulus " + t.utterance_id + " not in pool");
    auto cached = cache.find(t.utterance_id);
    if (cached == cache.end()) cached = cache.emplace(t.utterance_id, pool.load(*it->second).features).first;
    for (const auto& [name, est] : {std::pair<const char*, const FeatureEstimator*>{"crn", &model}, {"srp", &srp}}) {
      if (!*est) continue;
      const double a = (*est)(cached->second);
      records.push_back({uid, name, t.true_azimuth_deg, a, localization_error(t.true_azimuth_deg, a), t.snr_db});
    }
  }
  auto report = summarize(std::move(records), edges);
  report.provenance = {{"source", "listening test"}, {"pool_config_hash", pool.config_hash}};
  return report;
}

}  // namespace binloc
