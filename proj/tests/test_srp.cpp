#include <gtest/gtest.h>

#include <cmath>

#include "binloc/scene.hpp"
#include "binloc/srp.hpp"
#include "test_util.hpp"

using namespace binloc;
using binloc::testing::white_noise;

TEST(Woodworth, KnownValues) {
  EXPECT_EQ(azimuth_to_tdoa(0.0), 0.0);
  // 90 deg: r/c (1 + pi/2)
  EXPECT_NEAR(azimuth_to_tdoa(90.0), 6.558e-4, 1e-6);
  EXPECT_NEAR(azimuth_to_tdoa(90.0), 0.0875 / 343.0 * (1.0 + kPi / 2.0), 1e-15);
  EXPECT_EQ(azimuth_to_tdoa(-30.0), -azimuth_to_tdoa(30.0));
  EXPECT_THROW(azimuth_to_tdoa(91.0), Error);
  EXPECT_THROW(azimuth_to_tdoa(10.0, HeadModel{0.0, 343.0}), Error);
}

TEST(Woodworth, MonotoneOverFrontalArc) {
  double prev = -1.0;
  for (int a = -90; a <= 90; ++a) {
    const double t = azimuth_to_tdoa(a);
    EXPECT_GT(t, prev);
    prev = t;
  }
}

TEST(LateralAngle, FoldsRearOntoFront) {
  EXPECT_NEAR(lateral_angle_deg(150.0), 30.0, 1e-12);
  EXPECT_NEAR(lateral_angle_deg(-120.0), -60.0, 1e-12);
  EXPECT_NEAR(lateral_angle_deg(45.0), 45.0, 1e-12);
  EXPECT_NEAR(lateral_angle_deg(-180.0), 0.0, 1e-12);
}

TEST(SrpPhat, FindsSyntheticHeadAzimuths) {
  const auto src = white_noise(16000, 1);
  for (double az : {-75.0, -40.0, -10.0, 0.0, 20.0, 55.0, 80.0}) {
    const auto brir = synth_head_brir(az, {}, {}, 16000, 0);
    auto scene = spatialize(AudioBuffer::mono(16000, src), brir);
    scene.resize(src.size());
    const auto est = srp_phat(extract_features(scene));
    EXPECT_LE(std::abs(est.azimuth_deg - az), 3.0) << "az=" << az;
    EXPECT_EQ(est.per_frame.size(), extract_features(scene).frames);
    EXPECT_FALSE(est.degenerate);
  }
}

TEST(SrpPhat, MirrorSymmetry) {
  const auto src = white_noise(16000, 2);
  for (double az : {25.0, 60.0}) {
    auto s1 = spatialize(AudioBuffer::mono(16000, src), synth_head_brir(az, {}, {}, 16000, 0));
    auto s2 = spatialize(AudioBuffer::mono(16000, src), synth_head_brir(-az, {}, {}, 16000, 0));
    const double a = srp_phat(extract_features(s1)).azimuth_deg;
    const double b = srp_phat(extract_features(s2)).azimuth_deg;
    EXPECT_LE(std::abs(a + b), 1.0);
  }
}

TEST(SrpPhat, ZeroFeaturesAreDegenerateAndPickZero) {
  GccFeature f;
  f.frames = 3;
  f.max_lag = 25;
  f.values.assign(3 * 51, 0.0);
  const auto est = srp_phat(f);
  EXPECT_TRUE(est.degenerate);
  EXPECT_EQ(est.azimuth_deg, 0.0);
}

TEST(SrpPhat, GridOrderAndErrors) {
  const auto g = detail::frontal_grid(15.0);
  ASSERT_EQ(g.size(), 13u);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 15.0);
  EXPECT_EQ(g[2], -15.0);
  EXPECT_EQ(g.back(), -90.0);
  GccFeature empty;
  empty.max_lag = 25;
  EXPECT_THROW(srp_phat(empty), Error);
  GccFeature one;
  one.frames = 1;
  one.max_lag = 25;
  one.values.assign(51, 0.0);
  EXPECT_THROW(srp_phat(one, {}, 0.0), Error);
}

TEST(SrpPhat, LagInterpolationIsExactOnQuadratics) {
  const std::vector<double> g{1.0, 4.0, 9.0, 16.0, 25.0};  // (i+1)^2
  EXPECT_NEAR(detail::interp_lag(g, 1.5), 6.25, 1e-12);
  EXPECT_NEAR(detail::interp_lag(g, 3.25), 18.0625, 1e-12);
}
