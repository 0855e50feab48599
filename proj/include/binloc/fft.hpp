#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "binloc/core.hpp"

namespace binloc {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 transform with precomputed twiddles and bit-reversal table.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddle_(n / 2), bitrev_(n) {
    if (!is_power_of_two(n)) throw Error("fft: length " + std::to_string(n) + " is not a power of two");
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double phase = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = Complex(std::cos(phase), std::sin(phase));
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  // In-place; the inverse includes the 1/N scale.
  void execute(std::span<Complex> a, bool inverse) const {
    if (a.size() != n_) throw Error("fft: buffer length does not match plan");
    for (std::size_t i = 0; i < n_; ++i)
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          Complex w = twiddle_[k * stride];
          if (inverse) w = std::conj(w);
          const Complex u = a[start + k];
          const Complex v = a[start + k + half] * w;
          a[start + k] = u + v;
          a[start + k + half] = u - v;
        }
      }
    }
    if (inverse) {
      const double scale = 1.0 / static_cast<double>(n_);
      for (auto& x : a) x *= scale;
    }
  }

 private:
  std::size_t n_;
  std::vector<Complex> twiddle_;
  std::vector<std::size_t> bitrev_;
};

inline const FftPlan& fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
  return it->second;
}

inline void fft_inplace(std::span<Complex> a, bool inverse = false) { fft_plan(a.size()).execute(a, inverse); }

/// Spectrum of one analysis frame. `bins.size()` is the frame length.
struct FrameSpectrum {
  std::vector<Complex> bins;
  std::size_t frame_index = 0;

  std::size_t frame_length() const { return bins.size(); }
};

/// Forward DFT of a real frame (power-of-two length, fast path only).
inline FrameSpectrum dft(std::span<const double> frame, std::size_t frame_index = 0) {
  if (!is_power_of_two(frame.size()))
    throw Error("dft: length " + std::to_string(frame.size()) + " is not a power of two");
  FrameSpectrum out;
  out.frame_index = frame_index;
  out.bins.assign(frame.begin(), frame.end());
  fft_inplace(out.bins, false);
  return out;
}

/// Inverse DFT, returning the real part (imaginary residue is discarded).
inline std::vector<double> idft(std::span<const Complex> bins) {
  std::vector<Complex> tmp(bins.begin(), bins.end());
  fft_inplace(tmp, true);
  std::vector<double> out(tmp.size());
  for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = tmp[i].real();
  return out;
}

inline std::vector<double> idft(const FrameSpectrum& spectrum) { return idft(spectrum.bins); }

/// Full linear convolution, length a.size() + b.size() - 1. Short kernels use the
/// direct sum so that trivial kernels (a unit tap) stay exact.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::vector<double> out(out_len, 0.0);
  if (std::min(a.size(), b.size()) <= 64) {
    const auto& x = a.size() >= b.size() ? a : b;
    const auto& h = a.size() >= b.size() ? b : a;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double hk = h[k];
      if (hk == 0.0) continue;
      double* dst = out.data() + k;
      for (std::size_t n = 0; n < x.size(); ++n) dst[n] += hk * x[n];
    }
    return out;
  }
  const std::size_t n = next_power_of_two(out_len);
  std::vector<Complex> fa(n), fb(n);
  std::copy(a.begin(), a.end(), fa.begin());
  std::copy(b.begin(), b.end(), fb.begin());
  const FftPlan& plan = fft_plan(n);
  plan.execute(fa, false);
  plan.execute(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  plan.execute(fa, true);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace binloc
