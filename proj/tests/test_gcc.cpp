#include <gtest/gtest.h>

#include <cmath>

#include "binloc/gcc.hpp"
#include "test_util.hpp"

using namespace binloc;
using binloc::testing::delayed_pair;
using binloc::testing::white_noise;

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Brute-force GCC-PHAT: direct DFTs, PHAT weighting, direct inverse at each lag.
std::vector<double> oracle_gcc(const std::vector<double>& l, const std::vector<double>& r, int max_lag) {
  const std::size_t n = l.size();
  std::vector<Complex> L(n), R(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      const Complex w = std::polar(1.0, -2.0 * kPi * static_cast<double>((j * k) % n) / static_cast<double>(n));
      L[k] += l[j] * w;
      R[k] += r[j] * w;
    }
  std::vector<double> out;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    Complex acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      Complex p = L[k] * std::conj(R[k]);
      p = std::abs(p) < kPhatFloor ? Complex(0.0) : p / std::abs(p);
      const long e = (static_cast<long>(k) * lag) % static_cast<long>(n);
      acc += p * std::polar(1.0, -2.0 * kPi * static_cast<double>(e) / static_cast<double>(n));
    }
    out.push_back(acc.real() / static_cast<double>(n));
  }
  return out;
}

}  // namespace

TEST(GccPhat, FeatureShape) {
  const auto x = white_noise(32000, 1);
  const auto f = extract_features(AudioBuffer::stereo(16000, x, x));
  EXPECT_EQ(f.frames, 247u);
  EXPECT_EQ(f.lags(), 51u);
  EXPECT_EQ(f.values.size(), 247u * 51u);
  for (std::size_t t = 0; t < f.frames; ++t) EXPECT_EQ(argmax(f.row(t)), 25u);
}

TEST(GccPhat, MatchesBruteForceOracle) {
  const auto l = white_noise(64, 2);
  const auto r = white_noise(64, 3);
  const auto fast = gcc_phat_frame(dft(l), dft(r), 10);
  const auto ref = oracle_gcc(l, r, 10);
  ASSERT_EQ(fast.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-12);
}

TEST(GccPhat, RecoversIntegerDelays) {
  std::size_t hits = 0, total = 0;
  for (int d = -20; d <= 20; d += 4) {
    const auto f = extract_features(delayed_pair(white_noise(16000, 100 + static_cast<std::uint64_t>(d + 50)), d));
    // skip the first frame, whose start straddles the zero-padded onset
    for (std::size_t t = 1; t < f.frames; ++t, ++total)
      if (static_cast<int>(argmax(f.row(t))) - f.max_lag == d) ++hits;
  }
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(total), 0.99);
}

TEST(GccPhat, PositiveLagMeansLeftLeads) {
  const auto f = extract_features(delayed_pair(white_noise(8000, 4), 7));
  EXPECT_EQ(static_cast<int>(argmax(f.row(5))) - f.max_lag, 7);
}

TEST(GccPhat, ChannelSwapMirrorsLagsExactly) {
  const auto x = white_noise(8000, 5);
  const auto y = white_noise(8000, 6);
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (i >= 3 ? x[i - 3] : 0.0) + 0.3 * y[i];
  const auto f = extract_features(AudioBuffer::stereo(16000, x, r));
  const auto g = extract_features(AudioBuffer::stereo(16000, r, x));
  EXPECT_EQ(g.values, lag_flipped(f).values);
}

TEST(GccPhat, SilentFramesGiveZerosNotNan) {
  std::vector<double> x(4000, 0.0);
  auto noise = white_noise(2000, 7);
  std::copy(noise.begin(), noise.end(), x.begin() + 2000);
  const auto f = extract_features(AudioBuffer::stereo(16000, x, x));
  for (double v : f.row(0)) EXPECT_EQ(v, 0.0);
  for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(GccPhat, Errors) {
  const auto x = white_noise(1024, 8);
  EXPECT_THROW(extract_features(AudioBuffer::mono(16000, x)), Error);
  EXPECT_THROW(gcc_phat_frame(dft(std::vector<double>(64, 1.0)), dft(std::vector<double>(64, 1.0)), 32), Error);
  EXPECT_THROW(extract_features(AudioBuffer::stereo(16000, {1.0, 2.0}, {1.0, 2.0})), Error);
}
