#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace ctrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

using NodeId = std::uint32_t;

/// All randomness in a run flows through generators of this type.
using Rng = std::mt19937_64;

/// Independent random streams derived from one run seed.
enum class Stream : std::uint64_t {
  Movement = 1,
  Gps = 2,
  Imu = 3,
  Protocol = 4,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

inline Vec3 gaussian_vec(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return Vec3(x, y, z) * sigma;
}

}  // namespace ctrack
