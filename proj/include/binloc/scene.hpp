#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "binloc/audio.hpp"
#include "binloc/core.hpp"
#include "binloc/fft.hpp"
#include "binloc/srp.hpp"

namespace binloc {

struct BrirPair {
  std::vector<double> left;
  std::vector<double> right;
  int sample_rate = kDefaultSampleRate;
};

struct BRIRSet {
  std::map<double, BrirPair> entries;  // keyed by azimuth in [-180, 180)
  int sample_rate = kDefaultSampleRate;
  double source_distance_m = 1.0;
  std::string metadata;

  /// Entry whose azimuth is circularly closest to `azimuth_deg`.
  std::pair<double, const BrirPair*> nearest(double azimuth_deg) const {
    if (entries.empty()) throw Error("brir set: empty");
    double best_az = 0.0, best_d = 1e9;
    const BrirPair* best = nullptr;
    for (const auto& [az, pair] : entries) {
      double d = std::fmod(std::abs(az - azimuth_deg), 360.0);
      d = std::min(d, 360.0 - d);
      if (d < best_d) {
        best_d = d;
        best_az = az;
        best = &pair;
      }
    }
    return {best_az, best};
  }

  void validate() const {
    if (entries.size() < 2) throw Error("brir set: need at least 2 entries");
    for (const auto& [az, pair] : entries) {
      if (!(az >= -180.0 && az < 180.0)) throw Error("brir set: azimuth " + std::to_string(az) + " outside [-180, 180)");
      if (pair.sample_rate != sample_rate) throw Error("brir set: mixed sample rates");
      for (const auto* ir : {&pair.left, &pair.right})
        for (double x : *ir)
          if (!std::isfinite(x)) throw Error("brir set: non-finite IR value");
    }
  }
};

/// Manifest lines: `azimuth_deg left.wav right.wav` or `azimuth_deg stereo.wav`;
/// optional `source_distance_m <metres>`; `#` comments. Paths are relative to the manifest.
inline BRIRSet load_brir_set(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("load_brir_set: cannot open " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  BRIRSet set;
  set.metadata = "manifest: " + manifest_path.string();
  bool have_rate = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first == "source_distance_m") {
      if (!(ls >> set.source_distance_m)) throw Error("load_brir_set: bad source_distance_m on line " + std::to_string(line_no));
      continue;
    }
    double az = 0.0;
    try {
      std::size_t used = 0;
      az = std::stod(first, &used);
      if (used != first.size()) throw std::invalid_argument(first);
    } catch (const std::exception&) {
      throw Error("load_brir_set: line " + std::to_string(line_no) + ": expected an azimuth, got '" + first + "'");
    }
    std::vector<std::string> files;
    for (std::string f; ls >> f;) files.push_back(f);
    BrirPair pair;
    if (files.size() == 1) {
      const auto wav = read_wav(base / files[0]);
      if (!wav.is_stereo()) throw Error("load_brir_set: " + files[0] + " is not stereo");
      pair = {wav.samples(0), wav.samples(1), wav.sample_rate()};
    } else if (files.size() == 2) {
      const auto l = read_wav(base / files[0]);
      const auto r = read_wav(base / files[1]);
      if (l.channel_count() != 1 || r.channel_count() != 1) throw Error("load_brir_set: L/R files must be mono");
      if (l.sample_rate() != r.sample_rate()) throw Error("load_brir_set: mixed sample rates on line " + std::to_string(line_no));
      pair = {l.samples(0), r.samples(0), l.sample_rate()};
    } else {
      throw Error("load_brir_set: line " + std::to_string(line_no) + ": expected 1 or 2 wav paths");
    }
    if (!have_rate) {
      set.sample_rate = pair.sample_rate;
      have_rate = true;
    } else if (pair.sample_rate != set.sample_rate) {
      throw Error("load_brir_set: mixed sample rates");
    }
    if (set.entries.count(az)) throw Error("load_brir_set: duplicate azimuth " + first);
    set.entries.emplace(az, std::move(pair));
  }
  set.validate();
  return set;
}

/// Full linear convolution of a mono signal with an IR pair; both channels have
/// length N + max(len L, len R) - 1.
inline AudioBuffer spatialize(const AudioBuffer& mono, const BrirPair& brir) {
  if (mono.channel_count() != 1) throw Error("spatialize: expects a mono input");
  if (mono.sample_rate() != brir.sample_rate)
    throw Error("spatialize: input rate " + std::to_string(mono.sample_rate()) + " Hz does not match BRIR rate " +
                std::to_string(brir.sample_rate) + " Hz");
  if (mono.length() == 0) return AudioBuffer::stereo(mono.sample_rate(), {}, {});
  const std::size_t ir_len = std::max(brir.left.size(), brir.right.size());
  const std::size_t out_len = mono.length() + ir_len - 1;
  auto l = convolve(mono.channel(0), brir.left);
  auto r = convolve(mono.channel(0), brir.right);
  l.resize(out_len, 0.0);
  r.resize(out_len, 0.0);
  return AudioBuffer::stereo(mono.sample_rate(), std::move(l), std::move(r));
}

// ---------------------------------------------------------------------------
// Speech-shaped noise

struct SpectrumPoint {
  double frequency_hz;
  double level_db;  // spectrum level, dB per Hz (relative)
};

// Long-term average speech spectrum at normal vocal effort, one-third-octave centres.
inline constexpr const char* kSpeechSpectrumTable = R"(# frequency_hz spectrum_level_db
160   32.41
200   34.48
250   34.75
315   33.98
400   34.59
500   34.27
630   32.06
800   28.30
1000  25.01
1250  23.00
1600  20.15
2000  17.32
2500  13.18
3150  11.55
4000   9.33
5000   5.31
6300   2.59
8000   1.13
)";

inline std::vector<SpectrumPoint> parse_spectrum_table(const std::string& text) {
  std::vector<SpectrumPoint> points;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    SpectrumPoint p{};
    if (!(ls >> p.frequency_hz)) continue;
    if (!(ls >> p.level_db)) throw Error("spectrum table: malformed line");
    if (!points.empty() && !(p.frequency_hz > points.back().frequency_hz))
      throw Error("spectrum table: frequencies must increase");
    points.push_back(p);
  }
  if (points.empty()) throw Error("spectrum table: empty");
  return points;
}

inline const std::vector<SpectrumPoint>& speech_spectrum() {
  static const auto table = parse_spectrum_table(kSpeechSpectrumTable);
  return table;
}

/// Template level at `f`: log-frequency interpolation, edges held.
inline double spectrum_level_db(const std::vector<SpectrumPoint>& table, double f) {
  if (f <= table.front().frequency_hz) return table.front().level_db;
  if (f >= table.back().frequency_hz) return table.back().level_db;
  auto hi = std::upper_bound(table.begin(), table.end(), f,
                             [](double x, const SpectrumPoint& p) { return x < p.frequency_hz; });
  auto lo = hi - 1;
  const double t = std::log(f / lo->frequency_hz) / std::log(hi->frequency_hz / lo->frequency_hz);
  return lo->level_db + t * (hi->level_db - lo->level_db);
}

/// White Gaussian noise shaped to the speech spectrum template, unit RMS.
inline AudioBuffer speech_shaped_noise(double duration_s, int sample_rate, std::uint64_t seed) {
  if (!(duration_s > 0.0)) throw Error("speech_shaped_noise: duration must be positive");
  if (sample_rate <= 0) throw Error("speech_shaped_noise: sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const std::size_t len = next_power_of_two(std::max<std::size_t>(n, 2));
  std::mt19937_64 rng(derive_seed(seed, 0x55a));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Complex> spec(len);
  for (auto& x : spec) x = gauss(rng);
  fft_inplace(spec, false);
  const auto& table = speech_spectrum();
  for (std::size_t k = 0; k <= len / 2; ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(len);
    const double g = std::pow(10.0, spectrum_level_db(table, f) / 20.0);
    spec[k] *= g;
    if (k > 0 && k < len / 2) spec[len - k] *= g;
  }
  fft_inplace(spec, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real();
  const double r = rms(out);
  if (r > 0.0)
    for (auto& x : out) x /= r;
  return AudioBuffer::mono(sample_rate, std::move(out));
}

/// Speech-like surrogate for corpus-free runs: speech-shaped noise gated into
/// 80-400 ms bursts separated by 20-200 ms pauses, 10 ms raised-cosine ramps. Unit RMS.
inline AudioBuffer noise_burst_surrogate(double duration_s, int sample_rate, std::uint64_t seed) {
  AudioBuffer carrier = speech_shaped_noise(duration_s, sample_rate, derive_seed(seed, 1));
  auto x = carrier.channel(0);
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_real_distribution<double> on(0.08, 0.4), off(0.02, 0.2);
  std::vector<double> env(x.size(), 0.0);
  const auto ramp = static_cast<std::size_t>(0.01 * sample_rate);
  std::size_t pos = static_cast<std::size_t>(off(rng) * sample_rate * 0.5);
  while (pos < x.size()) {
    const auto len = static_cast<std::size_t>(on(rng) * sample_rate);
    for (std::size_t i = 0; i < len && pos + i < x.size(); ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / ramp);
      if (len - i <= ramp) g = std::min(g, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(len - i) / ramp));
      env[pos + i] = g;
    }
    pos += len + static_cast<std::size_t>(off(rng) * sample_rate);
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * env[i];
  const double r = rms(out);
  if (r > 0.0)
    for (auto& v : out) v /= r;
  return AudioBuffer::mono(sample_rate, std::move(out));
}

/// How completely a BRIR set covers the 5-degree azimuth ring.
enum class RingCoverage { full, frontal, partial };

inline const char* to_string(RingCoverage c) {
  switch (c) {
    case RingCoverage::full: return "full";
    case RingCoverage::frontal: return "frontal";
    default: return "partial";
  }
}

inline RingCoverage ring_coverage(const BRIRSet& brirs, std::size_t* missing_out = nullptr) {
  std::size_t missing = 0, missing_front = 0;
  for (int k = 0; k < 72; ++k) {
    const double az = -180.0 + 5.0 * k;
    double d = std::fmod(std::abs(brirs.nearest(az).first - az), 360.0);
    d = std::min(d, 360.0 - d);
    if (d > 2.5) {
      ++missing;
      if (az >= -90.0 && az <= 90.0) ++missing_front;
    }
  }
  if (missing_out) *missing_out = missing;
  if (missing == 0) return RingCoverage::full;
  return missing_front == 0 ? RingCoverage::frontal : RingCoverage::partial;
}

/// Diffuse noise: one independent speech-shaped source per BRIR entry, summed and
/// normalised to unit RMS on the stronger channel.
inline AudioBuffer make_isotropic_noise(const BRIRSet& brirs, double duration_s, std::uint64_t seed) {
  if (brirs.entries.empty()) throw Error("make_isotropic_noise: empty BRIR set");
  std::size_t missing = 0;
  if (ring_coverage(brirs, &missing) != RingCoverage::full)
    warn("isotropic noise: " + std::to_string(missing) + " of 72 ring directions (5 deg spacing) have no BRIR; skipped");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * brirs.sample_rate));
  std::vector<double> l(n, 0.0), r(n, 0.0);
  std::uint64_t index = 0;
  for (const auto& [az, pair] : brirs.entries) {
    const auto src = speech_shaped_noise(duration_s, brirs.sample_rate, derive_seed(seed, index++));
    const auto sp = spatialize(src, pair);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] += sp.samples(0)[i];
      r[i] += sp.samples(1)[i];
    }
  }
  const double strongest = std::max(rms(l), rms(r));
  if (strongest > 0.0)
    for (std::size_t i = 0; i < n; ++i) {
      l[i] /= strongest;
      r[i] /= strongest;
    }
  return AudioBuffer::stereo(brirs.sample_rate, std::move(l), std::move(r));
}

// ---------------------------------------------------------------------------
// SNR mixing

/// Mean of the per-channel SNRs in dB, noise scaled by `gain`.
inline double mean_channel_snr_db(const AudioBuffer& target, const AudioBuffer& noise, double gain = 1.0) {
  double acc = 0.0;
  for (std::size_t c = 0; c < target.channel_count(); ++c)
    acc += 10.0 * std::log10(energy(target.channel(c)) / (gain * gain * energy(noise.channel(c))));
  return acc / static_cast<double>(target.channel_count());
}

/// The single noise gain that puts the mean channel SNR (in dB) at `snr_db`.
inline double snr_noise_gain(const AudioBuffer& target, const AudioBuffer& noise, double snr_db) {
  if (target.channel_count() != noise.channel_count() || target.length() != noise.length() ||
      target.sample_rate() != noise.sample_rate())
    throw Error("mix_at_snr: target and noise must have equal shape and rate");
  for (std::size_t c = 0; c < target.channel_count(); ++c) {
    if (!(energy(target.channel(c)) > 0.0)) throw Error("mix_at_snr: silent target channel");
    if (!(energy(noise.channel(c)) > 0.0)) throw Error("mix_at_snr: silent noise channel");
  }
  // mean_c 10log10(Et_c / (g^2 En_c)) = raw - 20 log10 g
  return std::pow(10.0, (mean_channel_snr_db(target, noise) - snr_db) / 20.0);
}

inline AudioBuffer mix_at_snr(const AudioBuffer& target, const AudioBuffer& noise, double snr_db) {
  const double g = snr_noise_gain(target, noise, snr_db);
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < target.channel_count(); ++c) {
    std::vector<double> ch(target.length());
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = target.samples(c)[i] + g * noise.samples(c)[i];
    out.push_back(std::move(ch));
  }
  return AudioBuffer(target.sample_rate(), std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic spherical-head BRIRs

struct RoomSpec {
  double t60_s = 0.0;                // 0 = anechoic
  double direct_to_reverb_db = 3.0;  // direct energy over tail energy

  void validate() const {
    if (!(t60_s >= 0.0)) throw Error("room: t60 must be non-negative");
  }
};

namespace detail {

inline constexpr int kFracDelayHalfWidth = 16;
inline constexpr int kShelfHalfWidth = 15;

// Hann-windowed sinc fractional delay added into `ir`.
inline void add_fractional_impulse(std::vector<double>& ir, double delay, double gain = 1.0) {
  const long centre = static_cast<long>(std::floor(delay));
  const double width = kFracDelayHalfWidth + 1.0;
  for (long n = centre - kFracDelayHalfWidth; n <= centre + kFracDelayHalfWidth + 1; ++n) {
    if (n < 0 || n >= static_cast<long>(ir.size())) continue;
    const double x = static_cast<double>(n) - delay;
    if (std::abs(x) >= width) continue;
    const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
    const double window = 0.5 + 0.5 * std::cos(kPi * x / width);
    ir[static_cast<std::size_t>(n)] += gain * sinc * window;
  }
}

// Zero-phase (symmetric) FIR realising the magnitude of a first-order high-shelf cut
// with unity DC gain and `nyquist_gain` at fs/2. Length 2*kShelfHalfWidth+1.
inline std::vector<double> shelf_fir(double nyquist_gain, double corner_hz, int sample_rate) {
  const std::size_t grid = 512;
  const double k = std::tan(kPi * corner_hz / sample_rate);
  std::vector<Complex> spec(grid);
  for (std::size_t i = 0; i <= grid / 2; ++i) {
    const Complex z = std::polar(1.0, -2.0 * kPi * static_cast<double>(i) / grid);
    const Complex h = ((nyquist_gain + k) + (k - nyquist_gain) * z) / ((1.0 + k) + (k - 1.0) * z);
    spec[i] = std::abs(h);
    if (i > 0 && i < grid / 2) spec[grid - i] = std::abs(h);
  }
  fft_inplace(spec, true);
  std::vector<double> taps(2 * kShelfHalfWidth + 1);
  for (int j = -kShelfHalfWidth; j <= kShelfHalfWidth; ++j) {
    const double w = 0.5 + 0.5 * std::cos(kPi * j / (kShelfHalfWidth + 1.0));
    taps[static_cast<std::size_t>(j + kShelfHalfWidth)] = spec[static_cast<std::size_t>((j + static_cast<int>(grid)) % grid)].real() * w;
  }
  return taps;
}

}  // namespace detail

/// Spherical-head IR pair: fractional-delay direct paths carrying the Woodworth ITD,
/// a zero-phase high-shelf cut on the far ear (up to 12 dB at Nyquist, scaled by
/// |sin(lateral angle)|), and for t60 > 0 an uncorrelated exponentially decaying
/// Gaussian tail per ear.
inline BrirPair synth_head_brir(double azimuth_deg, const HeadModel& head, const RoomSpec& room, int sample_rate,
                                std::uint64_t seed) {
  if (!(azimuth_deg >= -180.0 && azimuth_deg < 180.0))
    throw Error("synth_head_brir: azimuth " + std::to_string(azimuth_deg) + " outside [-180, 180)");
  if (sample_rate <= 0) throw Error("synth_head_brir: sample rate must be positive");
  room.validate();
  head.validate();

  const double lateral = lateral_angle_deg(azimuth_deg);
  const double itd = azimuth_to_tdoa(lateral, head) * sample_rate;  // > 0: left leads
  const double max_itd = azimuth_to_tdoa(90.0, head) * sample_rate;
  const double base = detail::kFracDelayHalfWidth + std::ceil(max_itd / 2.0) + 1.0;
  const std::size_t direct_len =
      static_cast<std::size_t>(base + max_itd) + detail::kFracDelayHalfWidth + 2 * detail::kShelfHalfWidth + 4;

  std::vector<double> left(direct_len, 0.0), right(direct_len, 0.0);
  detail::add_fractional_impulse(left, base - itd / 2.0);
  detail::add_fractional_impulse(right, base + itd / 2.0);

  const double cut_db = 12.0 * std::abs(std::sin(deg_to_rad(lateral)));
  const auto shelf = detail::shelf_fir(std::pow(10.0, -cut_db / 20.0), 1500.0, sample_rate);
  std::vector<double> centre(shelf.size(), 0.0);
  centre[detail::kShelfHalfWidth] = 1.0;
  const bool left_far = lateral < 0.0;
  auto l = convolve(left, left_far ? shelf : centre);
  auto r = convolve(right, left_far ? centre : shelf);
  l.resize(direct_len);
  r.resize(direct_len);

  if (room.t60_s > 0.0) {
    const double direct_energy = 0.5 * (energy(l) + energy(r));
    const double tail_energy = direct_energy * std::pow(10.0, -room.direct_to_reverb_db / 10.0);
    const auto tail_len = static_cast<std::size_t>(std::ceil(room.t60_s * sample_rate));
    const std::size_t onset = static_cast<std::size_t>(base + max_itd / 2.0) + detail::kShelfHalfWidth + 1;
    const double decay = -3.0 * std::log(10.0) / (room.t60_s * sample_rate);  // amplitude: -60 dB energy at T60
    for (std::size_t ear = 0; ear < 2; ++ear) {
      std::mt19937_64 rng(derive_seed(seed, 100 + ear));
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<double> tail(tail_len);
      for (std::size_t i = 0; i < tail_len; ++i) tail[i] = gauss(rng) * std::exp(decay * static_cast<double>(i));
      const double s = std::sqrt(tail_energy / energy(tail));
      auto& ir = ear == 0 ? l : r;
      ir.resize(std::max(ir.size(), onset + tail_len), 0.0);
      for (std::size_t i = 0; i < tail_len; ++i) ir[onset + i] += s * tail[i];
    }
    const std::size_t len = std::max(l.size(), r.size());
    l.resize(len, 0.0);
    r.resize(len, 0.0);
  }
  return {std::move(l), std::move(r), sample_rate};
}

/// BRIR ring of synthetic-head responses every `step_deg` over [-180, 180).
inline BRIRSet synth_brir_ring(const HeadModel& head, const RoomSpec& room, int sample_rate, std::uint64_t seed,
                               double step_deg = 5.0) {
  BRIRSet set;
  set.sample_rate = sample_rate;
  set.metadata = "synthetic spherical head, t60=" + std::to_string(room.t60_s);
  std::uint64_t i = 0;
  for (double az = -180.0; az < 180.0 - 1e-9; az += step_deg)
    set.entries.emplace(az, synth_head_brir(az, head, room, sample_rate, derive_seed(seed, i++)));
  return set;
}

}  // namespace binloc
