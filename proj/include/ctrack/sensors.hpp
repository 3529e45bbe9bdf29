#pragma once

#include <cmath>
#include <stdexcept>

#include "ctrack/movement.hpp"
#include "ctrack/types.hpp"

namespace ctrack {

inline constexpr double kStandardGravity = 9.81;

struct GpsNoiseParams {
  double sigma_pos = 10.0;  // m, per axis
  double sigma_vel = 0.5;   // m/s, per axis

  void validate() const {
    if (sigma_pos < 0.0) throw std::invalid_argument("GpsNoiseParams.sigma_pos: must be >= 0");
    if (sigma_vel < 0.0) throw std::invalid_argument("GpsNoiseParams.sigma_vel: must be >= 0");
  }
};

struct GpsFix {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double pacc = 0.0;  // reported position accuracy, m
  double sacc = 0.0;  // reported speed accuracy, m/s
  NodeId sampler_id = 0;
};

// Receivers report a floor accuracy even with a noiseless simulated fix.
inline constexpr double kMinReportedAccuracy = 1e-3;

inline GpsFix sample_gps(const NodeKinematics& truth, double t, NodeId sampler,
                         const GpsNoiseParams& params, Rng& rng) {
  GpsFix fix;
  fix.timestamp = t;
  fix.sampler_id = sampler;
  fix.position = truth.position + gaussian_vec(rng, params.sigma_pos);
  fix.velocity = truth.velocity + gaussian_vec(rng, params.sigma_vel);
  fix.pacc = std::max(params.sigma_pos, kMinReportedAccuracy);
  fix.sacc = std::max(params.sigma_vel, kMinReportedAccuracy);
  return fix;
}

struct ImuParams {
  double noise_density_ug = 200.0;  // micro-g per sqrt(Hz)
  double bandwidth_hz = 50.0;
  double sample_rate_hz = 50.0;
  double duty_cycle = 0.25;

  void validate() const {
    if (noise_density_ug < 0.0) throw std::invalid_argument("ImuParams.noise_density_ug: must be >= 0");
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("ImuParams.bandwidth_hz: must be > 0");
    if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("ImuParams.sample_rate_hz: must be > 0");
    if (!(duty_cycle > 0.0 && duty_cycle <= 1.0))
      throw std::invalid_argument("ImuParams.duty_cycle: must be in (0,1]");
  }
};

/// RMS accelerometer noise in m/s^2: density * sqrt(1.6 * bandwidth), g-units converted.
inline double accel_noise_sigma(const ImuParams& p) {
  return p.noise_density_ug * 1e-6 * std::sqrt(p.bandwidth_hz * 1.6) * kStandardGravity;
}

/// World-frame acceleration reading. Orientation from the magnetometer is
/// assumed solved, so noise is applied directly in the world frame.
inline Vec3 sample_world_accel(const Vec3& truth_accel, const ImuParams& params, Rng& rng) {
  return truth_accel + gaussian_vec(rng, accel_noise_sigma(params));
}

}  // namespace ctrack
