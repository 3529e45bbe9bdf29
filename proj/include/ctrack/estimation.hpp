#pragma once

// Per-node position estimators: last-fix hold, offline linear interpolation,
// and the cooperative Kalman filter (position state, velocity control input,
// identity measurement model).

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ctrack/sensors.hpp"
#include "ctrack/types.hpp"

namespace ctrack {

struct KfState {
  Vec3 x = Vec3::Zero();   // position, m
  Mat3 P = Mat3::Zero();   // covariance, m^2
  Vec3 u = Vec3::Zero();   // last control input (velocity), m/s
  double t_last = 0.0;
};

/// x' = A x + B u, z = C x with A = C = I and B = dt I.
struct KfModel {
  double dt = 1.0;

  explicit KfModel(double dt_s = 1.0) : dt(dt_s) {
    if (!(dt > 0.0)) throw std::invalid_argument("KfModel.dt: must be > 0");
  }
  Mat3 A() const { return Mat3::Identity(); }
  Mat3 B() const { return dt * Mat3::Identity(); }
  Mat3 C() const { return Mat3::Identity(); }
};

/// diag(std_v^2 dt^2)
inline Mat3 build_q(const Vec3& std_v, double dt) {
  if ((std_v.array() < 0.0).any()) throw std::invalid_argument("build_q: negative std");
  return (std_v.array().square() * dt * dt).matrix().asDiagonal();
}

struct ReceiverContext {
  bool is_sampler = true;
  double cluster_radius = 50.0;
  double staleness_s = 0.0;
};

struct MeasurementNoise {
  double kappa = 0.5;            // per-axis std of a uniform offset in a disk of radius r is r/2
  double staleness_gain = 0.0;   // m/s of extra std per second of fix age
};

/// Measurement covariance for a (possibly cooperative) fix: base pacc^2 per
/// axis, plus (kappa * radius)^2 when the fix was taken by another node.
inline Mat3 build_r(const GpsFix& fix, const ReceiverContext& ctx, const MeasurementNoise& noise = {}) {
  double var = fix.pacc * fix.pacc;
  if (!ctx.is_sampler) {
    const double inflate = noise.kappa * ctx.cluster_radius;
    var += inflate * inflate;
  }
  if (noise.staleness_gain > 0.0) {
    const double s = noise.staleness_gain * ctx.staleness_s;
    var += s * s;
  }
  return Mat3::Identity() * var;
}

namespace detail {
inline void require_finite(const Vec3& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(what);
}
inline void require_finite(const Mat3& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(what);
}
}  // namespace detail

inline KfState kf_predict(const KfState& s, const Vec3& u, const KfModel& model, const Mat3& Q) {
  detail::require_finite(u, "kf_predict: non-finite control input");
  detail::require_finite(Q, "kf_predict: non-finite Q");
  KfState out = s;
  out.x = model.A() * s.x + model.B() * u;
  out.P = model.A() * s.P * model.A().transpose() + Q;
  out.u = u;
  out.t_last = s.t_last + model.dt;
  return out;
}

inline KfState kf_update(const KfState& s, const Vec3& z, const KfModel& model, const Mat3& R) {
  detail::require_finite(z, "kf_update: non-finite measurement");
  detail::require_finite(R, "kf_update: non-finite R");
  const Mat3 C = model.C();
  const Mat3 S = C * s.P * C.transpose() + R;
  Eigen::LDLT<Mat3> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
    throw std::domain_error("kf_update: innovation covariance is singular");
  // K = P C^T S^-1, computed as (S^-1 C P)^T since S and P are symmetric.
  const Mat3 K = ldlt.solve(C * s.P).transpose();
  KfState out = s;
  out.x = s.x + K * (z - C * s.x);
  out.P = (Mat3::Identity() - K * C) * s.P;
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

/// Euler-integrated velocity from a world-frame acceleration sample.
inline Vec3 imu_velocity_update(const Vec3& u, const Vec3& accel, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("imu_velocity_update: dt must be > 0");
  return u + accel * dt;
}

/// Holds the most recently adopted position; before any update it reports the
/// initial lock.
class LastFixHold {
 public:
  explicit LastFixHold(Vec3 initial, double t0 = 0.0) : pos_(std::move(initial)), t_(t0) {}

  void adopt(const Vec3& p, double t) {
    pos_ = p;
    t_ = t;
  }
  const Vec3& position() const { return pos_; }
  double adopted_at() const { return t_; }

 private:
  Vec3 pos_;
  double t_;
};

inline Vec3 hold_last_fix(const LastFixHold& h, double /*t*/) { return h.position(); }

struct TimedPosition {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
};

/// Per-second piecewise-linear track through `samples` (sorted by time);
/// constant before the first and after the last sample.
inline std::vector<Vec3> interpolate_track(const std::vector<TimedPosition>& samples,
                                           std::size_t track_length, double step_s = 1.0) {
  std::vector<Vec3> out(track_length, Vec3::Zero());
  if (samples.empty()) return out;
  if (samples.size() == 1) {
    std::fill(out.begin(), out.end(), samples.front().position);
    return out;
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < track_length; ++i) {
    const double t = static_cast<double>(i) * step_s;
    if (t <= samples.front().t) {
      out[i] = samples.front().position;
      continue;
    }
    if (t >= samples.back().t) {
      out[i] = samples.back().position;
      continue;
    }
    while (k + 1 < samples.size() && samples[k + 1].t < t) ++k;
    const auto& a = samples[k];
    const auto& b = samples[k + 1];
    const double span = b.t - a.t;
    const double w = span > 0.0 ? (t - a.t) / span : 1.0;
    out[i] = a.position + w * (b.position - a.position);
  }
  return out;
}

}  // namespace ctrack
