#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "binloc/core.hpp"
#include "binloc/gcc.hpp"

namespace binloc {

struct HeadModel {
  double radius_m = 0.0875;
  double speed_of_sound_mps = 343.0;

  void validate() const {
    if (!(radius_m > 0.0) || !(speed_of_sound_mps > 0.0)) throw Error("head model: radius and speed must be positive");
  }
};

/// Frontal-plane azimuth estimate. Degrees in [-90, 90], 0 ahead, positive = left.
struct AzimuthEstimate {
  double azimuth_deg = 0.0;
  double score = 0.0;
  std::vector<double> per_frame;
  bool degenerate = false;
};

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Spherical-head (Woodworth) interaural delay in seconds; positive when the left ear leads.
inline double azimuth_to_tdoa(double azimuth_deg, const HeadModel& head = {}) {
  head.validate();
  if (!(azimuth_deg >= -90.0 && azimuth_deg <= 90.0))
    throw Error("azimuth_to_tdoa: azimuth " + std::to_string(azimuth_deg) + " outside [-90, 90]");
  const double theta = deg_to_rad(azimuth_deg);
  return head.radius_m / head.speed_of_sound_mps * (std::sin(theta) + theta);
}

/// Lateral angle of any azimuth in [-180, 180): rear directions fold onto the front.
inline double lateral_angle_deg(double azimuth_deg) {
  double a = std::fmod(azimuth_deg, 360.0);
  if (a >= 180.0) a -= 360.0;
  if (a < -180.0) a += 360.0;
  if (a > 90.0) return 180.0 - a;
  if (a < -90.0) return -180.0 - a;
  return a;
}

namespace detail {

// 3-point Lagrange interpolation of a lag vector at fractional index `pos`.
inline double interp_lag(std::span<const double> g, double pos) {
  const long n = static_cast<long>(g.size());
  if (n == 1) return g[0];
  if (n == 2) {
    const double t = std::clamp(pos, 0.0, 1.0);
    return g[0] + t * (g[1] - g[0]);
  }
  const long centre = std::clamp(static_cast<long>(std::lround(pos)), 1L, n - 2);
  const double f = std::clamp(pos - static_cast<double>(centre), -1.0, 1.0);
  const double ym = g[static_cast<std::size_t>(centre - 1)];
  const double y0 = g[static_cast<std::size_t>(centre)];
  const double yp = g[static_cast<std::size_t>(centre + 1)];
  return ym * f * (f - 1.0) / 2.0 + y0 * (1.0 - f * f) + yp * f * (f + 1.0) / 2.0;
}

// 0, +s, -s, +2s, -2s, ... up to |theta| <= 90: argmax ties resolve toward smaller |theta|.
inline std::vector<double> frontal_grid(double step_deg) {
  std::vector<double> grid{0.0};
  for (int k = 1; k * step_deg <= 90.0 + 1e-9; ++k) {
    const double a = std::min(90.0, k * step_deg);
    grid.push_back(a);
    grid.push_back(-a);
  }
  return grid;
}

}  // namespace detail

/// Steered response power over the frontal grid; frame powers are summed before the argmax.
inline AzimuthEstimate srp_phat(const GccFeature& features, const HeadModel& head = {}, double grid_step_deg = 1.0) {
  if (!(grid_step_deg > 0.0)) throw Error("srp_phat: grid step must be positive");
  if (features.frames == 0) throw Error("srp_phat: empty features");
  head.validate();

  const auto grid = detail::frontal_grid(grid_step_deg);
  std::vector<double> positions(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    positions[i] = features.max_lag + azimuth_to_tdoa(grid[i], head) * features.sample_rate;

  AzimuthEstimate est;
  est.per_frame.resize(features.frames);
  std::vector<double> power(grid.size(), 0.0);
  for (std::size_t t = 0; t < features.frames; ++t) {
    const auto row = features.row(t);
    std::size_t best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double v = detail::interp_lag(row, positions[i]);
      power[i] += v;
      if (v > best_value) {
        best_value = v;
        best = i;
      }
    }
    est.per_frame[t] = grid[best];
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (power[i] > power[best]) best = i;
  est.azimuth_deg = grid[best];
  est.score = power[best];
  est.degenerate = std::all_of(power.begin(), power.end(), [](double p) { return p == 0.0; });
  return est;
}

}  // namespace binloc
