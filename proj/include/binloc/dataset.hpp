#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "binloc/audio.hpp"
#include "binloc/core.hpp"
#include "binloc/crn.hpp"
#include "binloc/earnoise.hpp"
#include "binloc/gcc.hpp"
#include "binloc/scene.hpp"
#include "binloc/srp.hpp"
#include "json.hpp"

namespace binloc {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "' (expected train, val or test)");
}

// ---------------------------------------------------------------------------
// Cached feature files

inline constexpr char kFeatureMagic[4] = {'B', 'L', 'G', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct LabeledFeature {
  GccFeature features;
  DirectionVector label;
};

inline void write_feature_file(const GccFeature& f, const DirectionVector& label, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_feature_file: cannot open " + path.string());
  const auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write(kFeatureMagic, 4);
  put(kFeatureVersion);
  put(static_cast<std::uint32_t>(f.frames));
  put(static_cast<std::uint32_t>(f.lags()));
  put(static_cast<std::int32_t>(f.max_lag));
  put(static_cast<std::uint32_t>(f.hop));
  put(static_cast<std::uint32_t>(f.frame_length));
  put(static_cast<std::uint32_t>(f.sample_rate));
  put(label.x);
  put(label.y);
  std::vector<float> values(f.values.begin(), f.values.end());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw Error("write_feature_file: write failed for " + path.string());
}

inline LabeledFeature read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_feature_file: cannot open " + path.string());
  const auto get = [&](auto& v) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw Error("read_feature_file: truncated " + path.string());
  };
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw Error("read_feature_file: not a feature file: " + path.string());
  std::uint32_t version = 0, rows = 0, cols = 0, hop = 0, frame_length = 0, rate = 0;
  std::int32_t max_lag = 0;
  get(version);
  if (version != kFeatureVersion) throw Error("read_feature_file: unsupported version " + std::to_string(version));
  get(rows);
  get(cols);
  get(max_lag);
  get(hop);
  get(frame_length);
  get(rate);
  LabeledFeature lf;
  get(lf.label.x);
  get(lf.label.y);
  if (cols != static_cast<std::uint32_t>(2 * max_lag + 1)) throw Error("read_feature_file: inconsistent lag count");
  std::vector<float> values(static_cast<std::size_t>(rows) * cols);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float))))
    throw Error("read_feature_file: truncated " + path.string());
  auto& f = lf.features;
  f.frames = rows;
  f.max_lag = max_lag;
  f.hop = hop;
  f.frame_length = frame_length;
  f.sample_rate = static_cast<int>(rate);
  f.values.assign(values.begin(), values.end());
  return lf;
}

// ---------------------------------------------------------------------------
// Manifest

struct DatasetRecord {
  std::string path;  // feature file, relative to the manifest directory
  double azimuth_deg = 0.0;
  double snr_db = 0.0;
  Split split = Split::train;
  std::string speaker;  // empty when unknown
  double t60_s = 0.0;
  std::string audio_path;  // optional rendered mixture

  std::string id() const { return std::filesystem::path(path).stem().string(); }
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
  std::vector<DatasetRecord> records;
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
  std::string config_hash;
  nlohmann::json header;  // full JSON header line
  std::filesystem::path root;  // directory that relative paths resolve against

  std::vector<const DatasetRecord*> in_split(Split s) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  LabeledFeature load(const DatasetRecord& r) const { return read_feature_file(resolve(r.path)); }
};

inline std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void write_manifest(const DatasetManifest& m, std::ostream& out) {
  nlohmann::json header = m.header;
  header["format_version"] = kManifestVersion;
  header["config_hash"] = m.config_hash;
  header["split_fractions"] = m.split_fractions;
  out << header.dump() << "\n";
  out << "path\tazimuth_deg\tsnr_db\tsplit\tspeaker\tt60_s\taudio_path\n";
  for (const auto& r : m.records)
    out << r.path << '\t' << format_number(r.azimuth_deg) << '\t' << format_number(r.snr_db) << '\t'
        << to_string(r.split) << '\t' << (r.speaker.empty() ? "-" : r.speaker) << '\t' << format_number(r.t60_s)
        << '\t' << (r.audio_path.empty() ? "-" : r.audio_path) << '\n';
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_manifest: cannot open " + path.string());
  write_manifest(m, out);
}

inline DatasetManifest read_manifest(std::istream& in, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  std::string line;
  if (!std::getline(in, line)) throw Error("read_manifest: empty manifest");
  try {
    m.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("read_manifest: bad header: ") + e.what());
  }
  if (m.header.value("format_version", 0) != kManifestVersion)
    throw Error("read_manifest: unsupported format version");
  m.config_hash = m.header.value("config_hash", "");
  if (m.header.contains("split_fractions")) m.split_fractions = m.header["split_fractions"].get<std::array<double, 3>>();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("path\t", 0) == 0) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, '\t');) fields.push_back(f);
    if (fields.size() < 4) throw Error("read_manifest: line " + std::to_string(line_no) + ": expected >= 4 fields");
    DatasetRecord r;
    r.path = fields[0];
    r.azimuth_deg = std::stod(fields[1]);
    r.snr_db = std::stod(fields[2]);
    r.split = parse_split(fields[3]);
    if (fields.size() > 4 && fields[4] != "-") r.speaker = fields[4];
    if (fields.size() > 5) r.t60_s = std::stod(fields[5]);
    if (fields.size() > 6 && fields[6] != "-") r.audio_path = fields[6];
    m.records.push_back(std::move(r));
  }
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_manifest: cannot open " + path.string());
  return read_manifest(in, path.parent_path());
}

/// Sizes {train, val, test} for `n` records: train and val rounded, test takes the rest.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
    throw Error("split fractions must be non-negative and sum to 1");
  const auto tr = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto va = std::min(n - std::min(n, tr), static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  return {std::min(n, tr), va, n - std::min(n, tr) - va};
}

/// Assigns splits in place. With speaker labels, whole speakers go to one split
/// (shuffled speaker order, train filled first, then val); otherwise exact counts.
inline void assign_splits(std::vector<DatasetRecord>& records, const std::array<double, 3>& fractions,
                          std::uint64_t seed) {
  const auto sizes = split_sizes(records.size(), fractions);
  std::mt19937_64 rng(derive_seed(seed, 0x5b1));
  const bool by_speaker = !records.empty() && std::all_of(records.begin(), records.end(),
                                                          [](const DatasetRecord& r) { return !r.speaker.empty(); });
  if (!by_speaker) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k)
      records[order[k]].split = k < sizes[0] ? Split::train : (k < sizes[0] + sizes[1] ? Split::val : Split::test);
    return;
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].speaker].push_back(i);
  std::vector<std::string> speakers;
  for (const auto& [s, idx] : groups) speakers.push_back(s);
  std::shuffle(speakers.begin(), speakers.end(), rng);
  std::size_t filled_train = 0, filled_val = 0;
  for (const auto& s : speakers) {
    Split target = Split::test;
    if (filled_train < sizes[0]) {
      target = Split::train;
      filled_train += groups[s].size();
    } else if (filled_val < sizes[1]) {
      target = Split::val;
      filled_val += groups[s].size();
    }
    for (auto i : groups[s]) records[i].split = target;
  }
}

// ---------------------------------------------------------------------------
// Generation

struct DatasetConfig {
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::string brir_source = "synthetic";  // synthetic | measured
  std::string brir_manifest;                // measured: BRIR manifest path
  std::vector<RoomSpec> rooms{RoomSpec{0.0, 3.0}, RoomSpec{0.46, 3.0}};
  HeadModel head;
  int sample_rate = kDefaultSampleRate;
  double duration_s = 2.0;
  double azimuth_min_deg = -90.0;
  double azimuth_max_deg = 90.0;
  double azimuth_step_deg = 0.0;  // 0 = continuous
  double snr_min_db = -25.0;
  double snr_max_db = 25.0;
  std::vector<double> snr_values_db;  // non-empty: cycled evenly instead of the uniform range
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
  std::string speech_dir;  // empty: noise-burst surrogate
  bool ear_noise = true;
  std::string noise_profile;  // empty: built-in table
  std::size_t ear_filter_taps = 1025;
  double reference_level_db_spl = 62.35;
  FeatureOptions features;
  bool write_audio = false;
  double noise_bank_s = 8.0;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const {
    if (count == 0) throw Error("dataset: count must be positive");
    if (!(duration_s > 0.0)) throw Error("dataset: duration must be positive");
    if (!(azimuth_min_deg >= -90.0 && azimuth_max_deg <= 90.0 && azimuth_min_deg <= azimuth_max_deg))
      throw Error("dataset: azimuth range must lie within [-90, 90]");
    if (snr_values_db.empty() && !(snr_min_db <= snr_max_db)) throw Error("dataset: snr_min_db > snr_max_db");
    if (rooms.empty()) throw Error("dataset: at least one room required");
    for (const auto& r : rooms) r.validate();
    if (brir_source != "synthetic" && brir_source != "measured")
      throw Error("dataset: brir_source must be 'synthetic' or 'measured'");
    if (brir_source == "measured" && brir_manifest.empty()) throw Error("dataset: measured BRIRs need brir_manifest");
    if (!(noise_bank_s >= duration_s)) throw Error("dataset: noise_bank_s must be >= duration_s");
    split_sizes(count, split_fractions);
  }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& r : c.rooms) rooms.push_back({{"t60_s", r.t60_s}, {"direct_to_reverb_db", r.direct_to_reverb_db}});
  j = {{"count", c.count},
       {"seed", c.seed},
       {"brir_source", c.brir_source},
       {"brir_manifest", c.brir_manifest},
       {"rooms", rooms},
       {"head_radius_m", c.head.radius_m},
       {"speed_of_sound_mps", c.head.speed_of_sound_mps},
       {"sample_rate", c.sample_rate},
       {"duration_s", c.duration_s},
       {"azimuth_min_deg", c.azimuth_min_deg},
       {"azimuth_max_deg", c.azimuth_max_deg},
       {"azimuth_step_deg", c.azimuth_step_deg},
       {"snr_min_db", c.snr_min_db},
       {"snr_max_db", c.snr_max_db},
       {"snr_values_db", c.snr_values_db},
       {"split_fractions", c.split_fractions},
       {"speech_dir", c.speech_dir},
       {"ear_noise", c.ear_noise},
       {"noise_profile", c.noise_profile},
       {"ear_filter_taps", c.ear_filter_taps},
       {"reference_level_db_spl", c.reference_level_db_spl},
       {"frame_length", c.features.frame_length},
       {"hop", c.features.hop},
       {"max_lag", c.features.max_lag},
       {"write_audio", c.write_audio},
       {"noise_bank_s", c.noise_bank_s}};
}

/// Hash of everything that affects generated content (thread count excluded).
inline std::string config_hash(const DatasetConfig& c) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(nlohmann::json(c).dump());
  return s.str();
}

struct SpeechFile {
  std::filesystem::path path;
  std::string speaker;
};

/// Mono WAVs under `dir`, sorted. Speaker = first sub-directory below `dir`, else a
/// letters+digits prefix before '_' in the file name (e.g. p225_001.wav), else empty.
inline std::vector<SpeechFile> scan_speech_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("speech corpus: not a directory: " + dir.string());
  std::vector<SpeechFile> files;
  static const std::regex prefix(R"(^([A-Za-z]+[0-9]+)_)");
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext != ".wav") continue;
    SpeechFile f{e.path(), ""};
    const auto rel = std::filesystem::relative(e.path(), dir);
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::distance(rel.begin(), rel.end()) > 1)
      f.speaker = rel.begin()->string();
    else if (std::regex_search(name, m, prefix))
      f.speaker = m[1];
    files.push_back(std::move(f));
  }
  std::sort(files.begin(), files.end(), [](const SpeechFile& a, const SpeechFile& b) { return a.path < b.path; });
  if (files.empty()) throw Error("speech corpus: no .wav files under " + dir.string());
  return files;
}

/// One synthesised record at every stage of the chain.
struct RenderedRecord {
  AudioBuffer target;   // spatialised speech, truncated to the record length
  AudioBuffer mixture;  // target + scaled isotropic noise
  AudioBuffer ear;      // after calibrate_level and add_ear_noise (== mixture when disabled)
  double azimuth_deg = 0.0;
  double snr_db = 0.0;
  double t60_s = 0.0;
  std::string speaker;
};

/// Holds everything shared between records (corpus listing, BRIRs, noise banks, ear
/// filter). `render(i)` depends only on (config, i).
class DatasetBuilder {
 public:
  explicit DatasetBuilder(DatasetConfig config) : config_(std::move(config)) {
    config_.validate();
    if (!config_.speech_dir.empty()) corpus_ = scan_speech_corpus(config_.speech_dir);
    if (config_.brir_source == "measured") {
      measured_ = load_brir_set(config_.brir_manifest);
      if (measured_->sample_rate != config_.sample_rate)
        throw Error("dataset: BRIR rate " + std::to_string(measured_->sample_rate) + " Hz does not match sample_rate");
      coverage_ = ring_coverage(*measured_);
      banks_.push_back(make_isotropic_noise(*measured_, config_.noise_bank_s, derive_seed(config_.seed, 0xb00)));
    } else {
      coverage_ = RingCoverage::full;
      for (std::size_t r = 0; r < config_.rooms.size(); ++r) {
        const auto ring = synth_brir_ring(config_.head, config_.rooms[r], config_.sample_rate,
                                          derive_seed(config_.seed, 0xa00 + r));
        banks_.push_back(make_isotropic_noise(ring, config_.noise_bank_s, derive_seed(config_.seed, 0xb00 + r)));
      }
    }
    if (config_.ear_noise) {
      const auto profile =
          config_.noise_profile.empty() ? default_noise_profile() : load_noise_profile(config_.noise_profile);
      filter_ = design_ear_filter(profile, config_.sample_rate, config_.ear_filter_taps);
    }
  }

  const DatasetConfig& config() const { return config_; }
  RingCoverage noise_ring() const { return coverage_; }
  const std::optional<EarFilter>& ear_filter() const { return filter_; }
  std::size_t record_length() const {
    return static_cast<std::size_t>(std::llround(config_.duration_s * config_.sample_rate));
  }

  RenderedRecord render(std::size_t index) const {
    const std::uint64_t seed = derive_seed(config_.seed, index);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n = record_length();
    RenderedRecord rec;

    // source signal
    AudioBuffer source = AudioBuffer::mono(config_.sample_rate, {});
    if (corpus_.empty()) {
      source = noise_burst_surrogate(config_.duration_s, config_.sample_rate, derive_seed(seed, 1));
    } else {
      const auto& file = corpus_[static_cast<std::size_t>(rng() % corpus_.size())];
      rec.speaker = file.speaker;
      source = speech_segment(file.path, n, rng);
    }

    // direction and room
    double az = 0.0;
    if (config_.azimuth_step_deg > 0.0) {
      // uniform over the grid points min, min + step, ... <= max
      const auto points = static_cast<std::uint64_t>(
          std::floor((config_.azimuth_max_deg - config_.azimuth_min_deg) / config_.azimuth_step_deg + 1e-9)) + 1;
      az = config_.azimuth_min_deg + config_.azimuth_step_deg * static_cast<double>(rng() % points);
    } else {
      az = config_.azimuth_min_deg + unit(rng) * (config_.azimuth_max_deg - config_.azimuth_min_deg);
    }
    const std::size_t room = index % (measured_ ? 1 : config_.rooms.size());
    BrirPair brir;
    if (measured_) {
      const auto [entry_az, pair] = measured_->nearest(az);
      az = lateral_angle_deg(entry_az);
      brir = *pair;
    } else {
      brir = synth_head_brir(az, config_.head, config_.rooms[room], config_.sample_rate, derive_seed(seed, 2));
      rec.t60_s = config_.rooms[room].t60_s;
    }
    rec.azimuth_deg = az;
    rec.target = spatialize(source, brir);
    rec.target.resize(n);

    // isotropic noise at the requested SNR
    rec.snr_db = config_.snr_values_db.empty()
                     ? config_.snr_min_db + unit(rng) * (config_.snr_max_db - config_.snr_min_db)
                     : config_.snr_values_db[index % config_.snr_values_db.size()];
    const auto& bank = banks_[measured_ ? 0 : room];
    const std::size_t offset = static_cast<std::size_t>(rng() % bank.length());
    std::vector<double> nl(n), nr(n);
    for (std::size_t i = 0; i < n; ++i) {
      nl[i] = bank.samples(0)[(offset + i) % bank.length()];
      nr[i] = bank.samples(1)[(offset + i) % bank.length()];
    }
    rec.mixture = mix_at_snr(rec.target, AudioBuffer::stereo(config_.sample_rate, std::move(nl), std::move(nr)),
                             rec.snr_db);

    rec.ear = filter_ ? apply_ear_chain(rec.mixture, derive_seed(seed, 3)) : rec.mixture;
    return rec;
  }

  /// calibrate_level to the reference level, then add_ear_noise.
  AudioBuffer apply_ear_chain(const AudioBuffer& stereo, std::uint64_t seed) const {
    if (!filter_) return stereo;
    return add_ear_noise(calibrate_level(stereo, config_.reference_level_db_spl, filter_->levels), *filter_, seed);
  }

  /// Renders every record, writes features (and optionally audio) plus the manifest.
  DatasetManifest build(const std::filesystem::path& out_dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "features");
    if (config_.write_audio) fs::create_directories(out_dir / "audio");

    std::vector<DatasetRecord> records(config_.count);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
      for (std::size_t i = next++; i < config_.count; i = next++) {
        try {
          const auto rec = render(i);
          char name[32];
          std::snprintf(name, sizeof(name), "rec_%06zu", i);
          DatasetRecord r;
          r.path = std::string("features/") + name + ".gcc";
          r.azimuth_deg = rec.azimuth_deg;
          r.snr_db = rec.snr_db;
          r.speaker = rec.speaker;
          r.t60_s = rec.t60_s;
          write_feature_file(extract_features(rec.ear, config_.features), direction_from_azimuth(rec.azimuth_deg),
                             out_dir / r.path);
          if (config_.write_audio) {
            r.audio_path = std::string("audio/") + name + ".wav";
            write_wav(rec.mixture, out_dir / r.audio_path, WavEncoding::float32);
          }
          records[i] = std::move(r);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = config_.count;
        }
      }
    };
    const unsigned threads = std::max(1u, config_.threads ? config_.threads : std::thread::hardware_concurrency());
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    assign_splits(records, config_.split_fractions, config_.seed);
    DatasetManifest m;
    m.records = std::move(records);
    m.split_fractions = config_.split_fractions;
    m.config_hash = config_hash(config_);
    m.root = out_dir;
    m.header = {{"config", config_},
                {"noise_ring", to_string(coverage_)},
                {"speech_source", corpus_.empty() ? "noise-burst surrogate" : config_.speech_dir}};
    write_manifest(m, out_dir / "manifest.tsv");
    return m;
  }

 private:
  AudioBuffer speech_segment(const std::filesystem::path& path, std::size_t n, std::mt19937_64& rng) const {
    const auto wav = read_wav(path);
    if (wav.sample_rate() != config_.sample_rate)
      throw Error("speech corpus: " + path.string() + " is " + std::to_string(wav.sample_rate()) +
                  " Hz, expected " + std::to_string(config_.sample_rate) + " Hz");
    std::vector<double> x(n, 0.0);
    const auto& src = wav.samples(0);
    const std::size_t start = src.size() > n ? static_cast<std::size_t>(rng() % (src.size() - n + 1)) : 0;
    for (std::size_t i = 0; i < n && start + i < src.size(); ++i) x[i] = src[start + i];
    if (!(rms(x) > 0.0)) throw Error("speech corpus: silent segment in " + path.string());
    return AudioBuffer::mono(config_.sample_rate, std::move(x));
  }

  DatasetConfig config_;
  std::vector<SpeechFile> corpus_;
  std::optional<BRIRSet> measured_;
  RingCoverage coverage_ = RingCoverage::full;
  std::vector<AudioBuffer> banks_;
  std::optional<EarFilter> filter_;
};

inline DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  return DatasetBuilder(config).build(out_dir);
}

}  // namespace binloc
