#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "binloc/audio.hpp"
#include "binloc/core.hpp"
#include "binloc/fft.hpp"

namespace binloc {

// Internal ear noise: the input is filtered by the inverse of the hearing-threshold
// noise spectrum and unit-PSD white noise is added, which is equivalent to adding
// noise shaped like the threshold without huge noise levels at the band edges.

struct ProfileEntry {
  double frequency_hz = 0.0;
  double threshold_db = 0.0;
  double critical_ratio_db = 0.0;

  /// Equivalent internal noise spectrum level.
  double noise_level_db() const { return threshold_db - critical_ratio_db; }

  friend bool operator==(const ProfileEntry&, const ProfileEntry&) = default;
};

struct NoiseProfile {
  std::vector<ProfileEntry> entries;
  double reference_level_db_spl = 62.35;

  friend bool operator==(const NoiseProfile&, const NoiseProfile&) = default;
};

/// Digital level convention: a full-scale sine is `full_scale_sine_db_spl` dB SPL.
struct LevelConvention {
  double full_scale_sine_db_spl = 100.0;

  /// RMS (in full-scale units) of a signal at `db_spl`.
  double rms_for_spl(double db_spl) const {
    return std::pow(10.0, (db_spl - full_scale_sine_db_spl) / 20.0) / std::sqrt(2.0);
  }
  double spl_for_rms(double rms_value) const {
    return full_scale_sine_db_spl + 20.0 * std::log10(rms_value * std::sqrt(2.0));
  }
};

// Free-field pure-tone thresholds with critical ratios chosen so that threshold - CR
// reproduces the standard internal-noise spectrum levels (one-third-octave centres).
// Entries below 160 Hz are extrapolated at the 160-200 Hz slope; 7500 Hz is
// log-interpolated between 6300 and 8000 Hz so the table stays below 8 kHz Nyquist.
inline constexpr const char* kDefaultNoiseProfileTable = R"(# frequency_hz threshold_db critical_ratio_db
80    31.5  24.0
100   26.5  21.3
125   22.1  19.2
160   17.9  17.3
200   14.4  16.1
250   11.4  15.3
315    8.6  14.7
400    6.2  14.4
500    4.4  14.1
630    3.0  13.8
800    2.2  14.1
1000   2.4  14.9
1250   3.5  17.0
1600   1.7  17.1
2000  -1.3  16.4
2500  -4.2  17.0
3150  -6.0  18.2
4000  -5.4  20.5
5000  -1.5  22.1
6300   6.0  21.8
7500  10.8  20.3
)";

inline void validate_profile(const NoiseProfile& profile, double sample_rate = 0.0) {
  if (profile.entries.empty()) throw Error("noise profile: empty profile");
  for (std::size_t i = 0; i < profile.entries.size(); ++i) {
    const auto& e = profile.entries[i];
    if (!(e.frequency_hz > 0.0)) throw Error("noise profile: frequencies must be positive");
    if (!std::isfinite(e.noise_level_db())) throw Error("noise profile: non-finite level");
    if (i > 0 && !(e.frequency_hz > profile.entries[i - 1].frequency_hz))
      throw Error("noise profile: frequencies must be strictly increasing");
    if (sample_rate > 0.0 && !(e.frequency_hz < sample_rate / 2.0))
      throw Error("noise profile: frequency " + std::to_string(e.frequency_hz) + " Hz is not below Nyquist");
  }
}

/// Parse `frequency_hz threshold_db critical_ratio_db` triples; `#` starts a comment.
inline NoiseProfile parse_noise_profile(std::istream& in) {
  NoiseProfile profile;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ProfileEntry e;
    if (!(ls >> e.frequency_hz)) continue;
    if (!(ls >> e.threshold_db >> e.critical_ratio_db))
      throw Error("noise profile: malformed line " + std::to_string(line_no));
    profile.entries.push_back(e);
  }
  validate_profile(profile);
  return profile;
}

inline NoiseProfile parse_noise_profile(const std::string& text) {
  std::istringstream in(text);
  return parse_noise_profile(in);
}

inline NoiseProfile load_noise_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("noise profile: cannot open " + path.string());
  return parse_noise_profile(in);
}

inline NoiseProfile default_noise_profile() { return parse_noise_profile(std::string(kDefaultNoiseProfileTable)); }

struct HearingLoss {
  double frequency_hz = 0.0;
  double loss_db = 0.0;
};

/// Raise the threshold by `loss_db` at each audiogram frequency. Frequencies not in
/// the profile are inserted with log-frequency interpolated threshold and CR.
inline NoiseProfile apply_hearing_loss(NoiseProfile profile, std::span<const HearingLoss> audiogram) {
  validate_profile(profile);
  for (const auto& loss : audiogram) {
    auto& entries = profile.entries;
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const ProfileEntry& e) { return std::abs(e.frequency_hz - loss.frequency_hz) < 0.5; });
    if (it == entries.end()) {
      auto upper = std::lower_bound(entries.begin(), entries.end(), loss.frequency_hz,
                                    [](const ProfileEntry& e, double f) { return e.frequency_hz < f; });
      ProfileEntry fresh{loss.frequency_hz, 0.0, 0.0};
      if (upper == entries.begin()) {
        fresh.threshold_db = upper->threshold_db;
        fresh.critical_ratio_db = upper->critical_ratio_db;
      } else if (upper == entries.end()) {
        fresh.threshold_db = entries.back().threshold_db;
        fresh.critical_ratio_db = entries.back().critical_ratio_db;
      } else {
        const auto& lo = *(upper - 1);
        const double t = std::log(loss.frequency_hz / lo.frequency_hz) / std::log(upper->frequency_hz / lo.frequency_hz);
        fresh.threshold_db = lo.threshold_db + t * (upper->threshold_db - lo.threshold_db);
        fresh.critical_ratio_db = lo.critical_ratio_db + t * (upper->critical_ratio_db - lo.critical_ratio_db);
      }
      it = entries.insert(upper, fresh);
    }
    it->threshold_db += loss.loss_db;
  }
  return profile;
}

/// Target filter gain in dB at `frequency_hz`: the negated noise spectrum level,
/// log-frequency interpolated, held constant outside the table.
inline double target_gain_db(const NoiseProfile& profile, double frequency_hz) {
  const auto& e = profile.entries;
  if (frequency_hz <= e.front().frequency_hz) return -e.front().noise_level_db();
  if (frequency_hz >= e.back().frequency_hz) return -e.back().noise_level_db();
  auto upper = std::upper_bound(e.begin(), e.end(), frequency_hz,
                                [](double f, const ProfileEntry& x) { return f < x.frequency_hz; });
  const auto& lo = *(upper - 1);
  const auto& hi = *upper;
  const double t = std::log(frequency_hz / lo.frequency_hz) / std::log(hi.frequency_hz / lo.frequency_hz);
  return -(lo.noise_level_db() + t * (hi.noise_level_db() - lo.noise_level_db()));
}

struct EarFilter {
  std::vector<double> taps;
  NoiseProfile design_profile;
  int sample_rate = kDefaultSampleRate;
  LevelConvention levels;

  std::size_t n_taps() const { return taps.size(); }

  /// Single unity tap: the ear-noise chain reduces to adding noise.
  static EarFilter identity(int sample_rate, LevelConvention levels = {}) {
    EarFilter f;
    f.taps = {1.0};
    f.sample_rate = sample_rate;
    f.levels = levels;
    return f;
  }
};

/// Magnitude response in dB of an FIR at `frequency_hz` (direct DTFT sum).
inline double magnitude_response_db(std::span<const double> taps, double frequency_hz, double sample_rate) {
  const double w = 2.0 * kPi * frequency_hz / sample_rate;
  double re = 0.0, im = 0.0;
  for (std::size_t n = 0; n < taps.size(); ++n) {
    re += taps[n] * std::cos(w * static_cast<double>(n));
    im -= taps[n] * std::sin(w * static_cast<double>(n));
  }
  return 10.0 * std::log10(re * re + im * im);
}

/// Linear-phase (type I) FIR by frequency sampling of the target log-magnitude on a
/// dense grid, truncated to `n_taps` with a Hann taper.
inline EarFilter design_ear_filter(const NoiseProfile& profile, int sample_rate, std::size_t n_taps = 1025,
                                   LevelConvention levels = {}) {
  validate_profile(profile, sample_rate);
  if (n_taps % 2 == 0) throw Error("design_ear_filter: n_taps must be odd, got " + std::to_string(n_taps));

  const std::size_t grid = std::max<std::size_t>(next_power_of_two(8 * n_taps), 1024);
  std::vector<Complex> spectrum(grid);
  for (std::size_t k = 0; k <= grid / 2; ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(grid);
    const double amp = std::pow(10.0, target_gain_db(profile, f) / 20.0);
    spectrum[k] = amp;
    if (k > 0 && k < grid / 2) spectrum[grid - k] = amp;
  }
  fft_inplace(spectrum, true);  // zero-phase, real and even

  const std::size_t half = (n_taps - 1) / 2;
  EarFilter filter;
  filter.design_profile = profile;
  filter.sample_rate = sample_rate;
  filter.levels = levels;
  filter.taps.resize(n_taps);
  for (std::size_t j = 0; j <= half; ++j) {
    // taper reaches zero just beyond the outermost taps
    const double taper =
        0.5 + 0.5 * std::cos(kPi * static_cast<double>(j) / static_cast<double>(half + 1));
    const double v = spectrum[j].real() * taper;
    filter.taps[half + j] = v;
    filter.taps[half - j] = v;
  }
  return filter;
}

/// Standard deviation of white noise with 0 dB SPL one-sided PSD (per Hz) across the
/// Nyquist band, expressed in full-scale units under the filter's level convention.
inline double ear_noise_sigma(const EarFilter& filter) {
  const double unit_rms = filter.levels.rms_for_spl(0.0);
  return unit_rms * std::sqrt(filter.sample_rate / 2.0);
}

/// The seeded noise added to channel `channel` by add_ear_noise.
inline std::vector<double> ear_noise_sequence(std::size_t length, const EarFilter& filter, std::uint64_t seed,
                                              std::size_t channel) {
  std::mt19937_64 rng(derive_seed(seed, channel));
  std::normal_distribution<double> gauss(0.0, ear_noise_sigma(filter));
  std::vector<double> noise(length);
  for (auto& x : noise) x = gauss(rng);
  return noise;
}

/// Filter each channel by the ear filter (delay compensated, same length) and add
/// independent seeded noise per channel.
inline AudioBuffer add_ear_noise(const AudioBuffer& buffer, const EarFilter& filter, std::uint64_t seed) {
  if (buffer.sample_rate() != filter.sample_rate)
    throw Error("add_ear_noise: buffer rate " + std::to_string(buffer.sample_rate()) +
                " Hz does not match filter design rate " + std::to_string(filter.sample_rate) + " Hz");
  if (filter.taps.empty()) throw Error("add_ear_noise: empty filter");
  const std::size_t delay = (filter.n_taps() - 1) / 2;
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < buffer.channel_count(); ++c) {
    const auto full = convolve(buffer.channel(c), filter.taps);
    std::vector<double> y(buffer.length());
    for (std::size_t n = 0; n < y.size(); ++n) y[n] = full[n + delay];
    const auto noise = ear_noise_sequence(y.size(), filter, seed, c);
    for (std::size_t n = 0; n < y.size(); ++n) y[n] += noise[n];
    out.push_back(std::move(y));
  }
  return AudioBuffer(buffer.sample_rate(), std::move(out));
}

/// Apply one shared gain so the stronger channel sits at `target_db_spl`.
inline AudioBuffer calibrate_level(const AudioBuffer& buffer, double target_db_spl, LevelConvention levels = {}) {
  double strongest = 0.0;
  for (std::size_t c = 0; c < buffer.channel_count(); ++c) strongest = std::max(strongest, rms(buffer.channel(c)));
  if (!(strongest > 0.0)) throw Error("calibrate_level: silent input (zero RMS)");
  AudioBuffer out = buffer;
  out.scale(levels.rms_for_spl(target_db_spl) / strongest);
  return out;
}

}  // namespace binloc
