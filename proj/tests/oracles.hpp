#pragma once

// Independent reference computations used by the tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "ctrack/estimation.hpp"
#include "ctrack/movement.hpp"

namespace oracle {

// Brute-force 1D Bayes filter on a uniform grid: the density is stored
// point-wise, prediction is a discrete convolution with the process-noise
// Gaussian, update multiplies by the measurement likelihood.
class GridFilter {
 public:
  GridFilter(double lo, double hi, double h, double mean0, double var0) : lo_(lo), h_(h) {
    const auto n = static_cast<std::size_t>(std::llround((hi - lo) / h)) + 1;
    w_.resize(n);
    for (std::size_t i = 0; i < n; ++i) w_[i] = gauss(x(i) - mean0, var0);
    normalize();
  }

  double x(std::size_t i) const { return lo_ + static_cast<double>(i) * h_; }

  void predict(double shift, double q) {
    const std::size_t n = w_.size();
    std::vector<double> out(n, 0.0);
    const double half = 10.0 * std::sqrt(q);
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil((half + std::abs(shift)) / h_));
    // Kernel value for an index offset k = j - i.
    std::vector<double> kern(static_cast<std::size_t>(2 * reach + 1));
    for (std::ptrdiff_t k = -reach; k <= reach; ++k)
      kern[static_cast<std::size_t>(k + reach)] = gauss(static_cast<double>(k) * h_ - shift, q);
    const double wmax = *std::max_element(w_.begin(), w_.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (w_[i] < 1e-20 * wmax) continue;  // contributes nothing representable
      const auto ii = static_cast<std::ptrdiff_t>(i);
      const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, ii - reach);
      const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, ii + reach);
      const double wi = w_[i];
      const double* k = kern.data() + (j0 - ii + reach);
      double* o = out.data() + j0;
      for (std::ptrdiff_t j = j0; j <= j1; ++j) *o++ += wi * *k++;
    }
    w_ = std::move(out);
    normalize();
  }

  void update(double z, double r) {
    for (std::size_t i = 0; i < w_.size(); ++i) w_[i] *= gauss(z - x(i), r);
    normalize();
  }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) m += w_[i] * x(i);
    return m;
  }

  double variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) v += w_[i] * (x(i) - m) * (x(i) - m);
    return v;
  }

 private:
  static double gauss(double d, double var) { return std::exp(-0.5 * d * d / var); }
  void normalize() {
    double s = 0.0;
    for (double v : w_) s += v;
    for (double& v : w_) v /= s;
  }

  double lo_;
  double h_;
  std::vector<double> w_;
};

// Mean of a chi distribution with 3 degrees of freedom, scaled by sigma.
inline double chi3_mean(double sigma) { return sigma * 2.0 * std::sqrt(2.0 / M_PI); }

// Nodes moving in a straight line at a common velocity, with fixed offsets.
inline ctrack::GroundTruthTrace straight_line(const std::vector<ctrack::Vec3>& start, const ctrack::Vec3& v,
                                              std::size_t samples, double step = 1.0) {
  ctrack::GroundTruthTrace tr(start.size(), samples, step, 0);
  for (std::size_t t = 0; t < samples; ++t)
    for (std::size_t i = 0; i < start.size(); ++i) {
      tr.position(i, t) = start[i] + v * (static_cast<double>(t) * step);
      tr.velocity(i, t) = v;
    }
  return tr;
}

// Static nodes whose recorded velocities are set independently of position.
inline ctrack::GroundTruthTrace static_with_velocity(const std::vector<ctrack::Vec3>& pos,
                                                     const std::vector<ctrack::Vec3>& vel, std::size_t samples) {
  ctrack::GroundTruthTrace tr(pos.size(), samples, 1.0, 0);
  for (std::size_t t = 0; t < samples; ++t)
    for (std::size_t i = 0; i < pos.size(); ++i) {
      tr.position(i, t) = pos[i];
      tr.velocity(i, t) = vel[i];
    }
  return tr;
}

// One randomized 1D scenario: 50 predict/update steps through the library
// filter (x axis) and through the grid filter. Returns the largest absolute
// difference between the two posterior means.
inline double kf_vs_grid(std::uint64_t seed, std::size_t steps = 50) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const double x0 = -20.0 + 40.0 * U(rng);
  const double p0 = 1.0 + 9.0 * U(rng);
  const double q = 0.05 + 0.45 * U(rng);
  const double r = 1.0 + 24.0 * U(rng);
  const double u = -0.4 + 0.8 * U(rng);

  ctrack::KfModel model(1.0);
  ctrack::KfState kf;
  kf.x = ctrack::Vec3(x0, 0.0, 0.0);
  kf.P = ctrack::Mat3::Identity() * p0;
  const ctrack::Mat3 Q = ctrack::Mat3::Identity() * q;
  const ctrack::Mat3 R = ctrack::Mat3::Identity() * r;
  GridFilter grid(-100.0, 100.0, 0.01, x0, p0);

  double truth = x0 + std::sqrt(p0) * N(rng);
  double worst = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    truth += u + std::sqrt(q) * N(rng);
    const double z = truth + std::sqrt(r) * N(rng);
    kf = ctrack::kf_predict(kf, ctrack::Vec3(u, 0.0, 0.0), model, Q);
    kf = ctrack::kf_update(kf, ctrack::Vec3(z, 0.0, 0.0), model, R);
    grid.predict(u, q);
    grid.update(z, r);
    worst = std::max(worst, std::abs(kf.x.x() - grid.mean()));
  }
  return worst;
}

}  // namespace oracle
