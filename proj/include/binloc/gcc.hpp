#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "binloc/audio.hpp"
#include "binloc/core.hpp"
#include "binloc/fft.hpp"

namespace binloc {

// Lag sign convention: positive lag means the sound reaches the LEFT ear first
// (right channel is a delayed copy of the left), i.e. a source on the left.

inline constexpr double kPhatFloor = 1e-12;

struct FeatureOptions {
  std::size_t frame_length = 512;
  std::size_t hop = 128;
  int max_lag = 25;
};

/// Time-frames x lag-bins GCC-PHAT matrix, row-major. Column `max_lag` is lag 0.
struct GccFeature {
  std::vector<double> values;
  std::size_t frames = 0;
  int max_lag = 0;
  std::size_t hop = 0;
  std::size_t frame_length = 0;
  int sample_rate = kDefaultSampleRate;

  std::size_t lags() const { return static_cast<std::size_t>(2 * max_lag + 1); }
  double at(std::size_t frame, int lag) const { return values[frame * lags() + static_cast<std::size_t>(lag + max_lag)]; }
  std::span<const double> row(std::size_t frame) const { return {values.data() + frame * lags(), lags()}; }
  std::span<double> row(std::size_t frame) { return {values.data() + frame * lags(), lags()}; }
};

/// PHAT-normalised cross-power spectrum: unit magnitude per bin, or zero below the floor.
inline std::vector<Complex> phat_cross_spectrum(const FrameSpectrum& left, const FrameSpectrum& right) {
  if (left.frame_length() != right.frame_length()) throw Error("gcc_phat: mismatched frame lengths");
  std::vector<Complex> cross(left.frame_length());
  for (std::size_t k = 0; k < cross.size(); ++k) {
    const Complex p = left.bins[k] * std::conj(right.bins[k]);
    const double mag = std::abs(p);
    cross[k] = mag < kPhatFloor ? Complex(0.0, 0.0) : p / mag;
  }
  return cross;
}

namespace detail {

// cos/sin(2 pi k m / n) for m in [0, max_lag], k in [0, n/2], row-major by m.
struct LagBasis {
  std::size_t n = 0;
  int max_lag = 0;
  std::vector<double> c, s;
};

inline const LagBasis& lag_basis(std::size_t n, int max_lag) {
  thread_local std::vector<LagBasis> cache;
  for (const auto& b : cache)
    if (b.n == n && b.max_lag == max_lag) return b;
  LagBasis b{n, max_lag, {}, {}};
  const std::size_t half = n / 2;
  for (int m = 0; m <= max_lag; ++m)
    for (std::size_t k = 0; k <= half; ++k) {
      const double theta = 2.0 * kPi * static_cast<double>((k * static_cast<std::size_t>(m)) % n) / static_cast<double>(n);
      b.c.push_back(std::cos(theta));
      b.s.push_back(std::sin(theta));
    }
  cache.push_back(std::move(b));
  return cache.back();
}

}  // namespace detail

/// GCC-PHAT lag vector of length 2*max_lag+1, index max_lag = lag 0.
///
/// Evaluated directly from the Hermitian half of the PHAT spectrum, only at the
/// requested lags. Lags +m and -m share their partial sums, so swapping the input
/// channels mirrors the output bit for bit.
inline std::vector<double> gcc_phat_frame(const FrameSpectrum& left, const FrameSpectrum& right, int max_lag) {
  const std::size_t n = left.frame_length();
  if (max_lag < 0 || static_cast<std::size_t>(max_lag) >= n / 2)
    throw Error("gcc_phat: max_lag must satisfy 0 <= max_lag < frame_length/2");
  const auto cross = phat_cross_spectrum(left, right);
  const auto& basis = detail::lag_basis(n, max_lag);
  const std::size_t half = n / 2;
  const double inv_n = 1.0 / static_cast<double>(n);
  // out[lag] = (1/n) sum_k X_k exp(-i 2 pi k lag / n): peak at +d when the right channel lags by d
  std::vector<double> out(static_cast<std::size_t>(2 * max_lag + 1));
  for (int m = 0; m <= max_lag; ++m) {
    const double* c = basis.c.data() + static_cast<std::size_t>(m) * (half + 1);
    const double* s = basis.s.data() + static_cast<std::size_t>(m) * (half + 1);
    double a = 0.0, b = 0.0;
    for (std::size_t k = 1; k < half; ++k) {
      a += cross[k].real() * c[k];
      b += cross[k].imag() * s[k];
    }
    const double edges = cross[0].real() + (m % 2 ? -cross[half].real() : cross[half].real());
    out[static_cast<std::size_t>(max_lag + m)] = (edges + 2.0 * (a + b)) * inv_n;
    out[static_cast<std::size_t>(max_lag - m)] = (edges + 2.0 * (a - b)) * inv_n;
  }
  return out;
}

inline GccFeature extract_features(const AudioBuffer& buffer, const FeatureOptions& opts = {}) {
  if (!buffer.is_stereo()) throw Error("extract_features: expects a stereo buffer");
  const auto left = frame_signal(buffer.channel(0), opts.frame_length, opts.hop);
  const auto right = frame_signal(buffer.channel(1), opts.frame_length, opts.hop);

  GccFeature feat;
  feat.frames = left.size();
  feat.max_lag = opts.max_lag;
  feat.hop = opts.hop;
  feat.frame_length = opts.frame_length;
  feat.sample_rate = buffer.sample_rate();
  feat.values.resize(feat.frames * feat.lags());
  for (std::size_t t = 0; t < feat.frames; ++t) {
    const auto row = gcc_phat_frame(dft(left[t], t), dft(right[t], t), opts.max_lag);
    std::copy(row.begin(), row.end(), feat.row(t).begin());
  }
  return feat;
}

/// Swap channels: each row is reversed about lag 0.
inline GccFeature lag_flipped(const GccFeature& f) {
  GccFeature out = f;
  for (std::size_t t = 0; t < f.frames; ++t) {
    auto src = f.row(t);
    auto dst = out.row(t);
    std::copy(src.rbegin(), src.rend(), dst.begin());
  }
  return out;
}

}  // namespace binloc
