#pragma once

// Seeded 3D group movement: Reynolds flocking with base-camp departure,
// goal-directed transit and random-steering foraging.
//
// Trace convention: sample t holds (p(t), v(t)) and p(t+1) = p(t) + v(t)*dt
// exactly. Boundary handling reflects the *next* velocity so the Euler
// relation is never broken.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctrack/types.hpp"

namespace ctrack {

struct NodeKinematics {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

enum class Phase : std::uint8_t { Outbound = 0, Forage = 1, Return = 2, Roost = 3 };

inline bool is_transit(Phase p) { return p == Phase::Outbound || p == Phase::Return; }

struct FlockConfig {
  std::size_t n_nodes = 20;
  double duration_s = 43200.0;
  double step_s = 1.0;
  double target_speed = 6.0;
  double target_spacing = 20.0;

  Vec3 volume = Vec3(50000.0, 50000.0, 1000.0);

  // Empty base_camps / NaN forage_center => placed randomly from the seed.
  std::vector<Vec3> base_camps;
  Vec3 forage_center = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  double forage_radius = 1500.0;
  double camp_distance_min = 4000.0;
  double camp_distance_max = 9000.0;
  double camp_scatter = 25.0;
  double camp_split = 0.5;  // fraction of nodes starting at camp 0
  double altitude_min = 40.0;
  double altitude_max = 400.0;

  double w_separation = 1.5;
  double w_alignment = 0.25;
  double w_cohesion = 0.20;
  double w_goal = 0.05;
  double w_speed = 1.0;
  double perception_radius = 70.0;

  // Forage random steering (Ornstein-Uhlenbeck on a heading vector).
  double wander_tau_s = 40.0;
  double wander_sigma = 0.5;
  double wander_shared = 0.8;   // share of the group-wide heading component
  double wander_vertical = 0.15;

  // Phase schedule: forage until return_time_fraction * duration, then fly home.
  double return_time_fraction = 0.7;

  void validate() const {
    auto fail = [](const char* field, const char* what) {
      throw std::invalid_argument(std::string("FlockConfig.") + field + ": " + what);
    };
    if (n_nodes < 2) fail("n_nodes", "must be >= 2");
    if (!(duration_s > 0.0)) fail("duration_s", "must be > 0");
    if (!(step_s > 0.0)) fail("step_s", "must be > 0");
    if (!(target_speed > 0.0)) fail("target_speed", "must be > 0");
    if (!(target_spacing > 0.0)) fail("target_spacing", "must be > 0");
    if (!(volume.minCoeff() > 0.0)) fail("volume", "must be positive");
    if (w_separation < 0 || w_alignment < 0 || w_cohesion < 0 || w_goal < 0 || w_speed < 0)
      fail("weights", "must be >= 0");
    if (!(perception_radius > 0.0)) fail("perception_radius", "must be > 0");
    if (!(forage_radius > 0.0)) fail("forage_radius", "must be > 0");
    if (!(wander_tau_s > 0.0)) fail("wander_tau_s", "must be > 0");
    if (wander_sigma < 0.0) fail("wander_sigma", "must be >= 0");
    if (wander_shared < 0.0 || wander_shared > 1.0) fail("wander_shared", "must be in [0,1]");
    if (camp_split < 0.0 || camp_split > 1.0) fail("camp_split", "must be in [0,1]");
    if (return_time_fraction < 0.0 || return_time_fraction > 1.0)
      fail("return_time_fraction", "must be in [0,1]");
    if (!(altitude_min >= 0.0 && altitude_max <= volume.z() && altitude_min < altitude_max))
      fail("altitude_min", "altitude band must lie inside the volume");
    if (camp_distance_min < 0.0 || camp_distance_max < camp_distance_min)
      fail("camp_distance_min", "need 0 <= min <= max");
    if (!base_camps.empty() && base_camps.size() != 2) fail("base_camps", "need exactly 2");
    for (const auto& c : base_camps)
      if (!inside(c)) fail("base_camps", "outside the volume");
    if (!forage_center.hasNaN()) {
      if (!inside(forage_center)) fail("forage_center", "outside the volume");
      for (int k = 0; k < 2; ++k)
        if (forage_center[k] - forage_radius < 0.0 || forage_center[k] + forage_radius > volume[k])
          fail("forage_radius", "forage region must lie inside the volume");
    }
  }

  bool inside(const Vec3& p) const {
    return (p.array() >= 0.0).all() && (p.array() <= volume.array()).all();
  }

  std::size_t samples() const {
    return static_cast<std::size_t>(std::llround(duration_s / step_s));
  }
};

/// Per-node steering request for one step.
struct Steering {
  Phase phase = Phase::Outbound;
  Vec3 goal = Vec3::Zero();    // transit target or forage/roost centre
  double leash = 0.0;          // forage: radius beyond which the goal pulls
};

struct FlockState {
  std::vector<NodeKinematics> nodes;
  std::vector<Vec3> wander;  // per-node heading noise
  Vec3 shared_wander = Vec3::Zero();
};

namespace detail {

inline Vec3 unit_or(const Vec3& v, const Vec3& fallback) {
  const double n = v.norm();
  return n > 1e-12 ? Vec3(v / n) : fallback;
}

inline void ou_step(Vec3& w, double dt, double tau, double sigma, double vertical, Rng& rng) {
  Vec3 noise = gaussian_vec(rng, sigma * std::sqrt(dt));
  noise.z() *= vertical;
  w += -w * (dt / tau) + noise;
  const double n = w.norm();
  if (n > 1.0) w /= n;
}

}  // namespace detail

/// Advances every node one step. Positions move with the current velocity;
/// the new velocity comes from separation, alignment, cohesion, and either
/// goal attraction (transit) or bounded random steering (forage).
inline FlockState boid_step(const FlockState& state, const FlockConfig& cfg,
                            std::span<const Steering> steering, Rng& rng) {
  const std::size_t n = state.nodes.size();
  const double dt = cfg.step_s;
  FlockState next = state;

  for (std::size_t i = 0; i < n; ++i)
    next.nodes[i].position = state.nodes[i].position + state.nodes[i].velocity * dt;

  // Random steering state evolves every step so that the draw sequence does
  // not depend on the phase mix.
  detail::ou_step(next.shared_wander, dt, cfg.wander_tau_s, cfg.wander_sigma,
                  cfg.wander_vertical, rng);
  for (std::size_t i = 0; i < n; ++i)
    detail::ou_step(next.wander[i], dt, cfg.wander_tau_s, cfg.wander_sigma,
                    cfg.wander_vertical, rng);

  const double sep_r = cfg.target_spacing;
  const double vmin = 0.5 * cfg.target_speed;
  const double vmax = 1.5 * cfg.target_speed;

  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = next.nodes[i].position;
    const Vec3& v = state.nodes[i].velocity;

    Vec3 sep = Vec3::Zero();
    Vec3 vel_sum = Vec3::Zero();
    Vec3 pos_sum = Vec3::Zero();
    int neighbours = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Vec3 d = p - next.nodes[j].position;
      const double dist = d.norm();
      if (dist < sep_r) {
        // Coincident nodes separate along x, ordered by id.
        const Vec3 away = dist > 1e-9 ? Vec3(d / dist) : Vec3(i < j ? -1.0 : 1.0, 0.0, 0.0);
        sep += away * ((sep_r - dist) / sep_r);
      }
      if (dist < cfg.perception_radius) {
        vel_sum += state.nodes[j].velocity;
        pos_sum += next.nodes[j].position;
        ++neighbours;
      }
    }

    Vec3 accel = cfg.w_separation * cfg.target_speed * sep;
    if (neighbours > 0) {
      accel += cfg.w_alignment * (vel_sum / neighbours - v);
      accel += cfg.w_cohesion * cfg.target_speed * (pos_sum / neighbours - p) / cfg.perception_radius;
    }

    const Steering& s = steering[i];
    const Vec3 to_goal = s.goal - p;
    if (is_transit(s.phase)) {
      const Vec3 desired = cfg.target_speed * detail::unit_or(to_goal, detail::unit_or(v, Vec3::UnitX()));
      accel += cfg.w_goal * (desired - v);
    } else {
      const Vec3 heading = cfg.wander_shared * next.shared_wander +
                           (1.0 - cfg.wander_shared) * next.wander[i];
      Vec3 desired = cfg.target_speed * detail::unit_or(heading, detail::unit_or(v, Vec3::UnitX()));
      const double excess = to_goal.norm() - s.leash;
      if (excess > 0.0) {
        // Outside the leash the goal blends in progressively.
        const double a = std::min(1.0, excess / std::max(s.leash, 1.0) * 4.0);
        desired = cfg.target_speed * detail::unit_or(
            (1.0 - a) * desired / cfg.target_speed + a * detail::unit_or(to_goal, Vec3::UnitX()),
            Vec3::UnitX());
      }
      accel += cfg.w_goal * (desired - v);
    }

    // Altitude band.
    if (p.z() < cfg.altitude_min) accel.z() += cfg.w_goal * (cfg.altitude_min - p.z()) * 0.1;
    if (p.z() > cfg.altitude_max) accel.z() -= cfg.w_goal * (p.z() - cfg.altitude_max) * 0.1;

    const double speed = v.norm();
    if (speed > 1e-12) accel += cfg.w_speed * (cfg.target_speed - speed) * v / speed;

    Vec3 nv = v + accel * dt;
    const double ns = nv.norm();
    if (ns < 1e-12) {
      nv = vmin * detail::unit_or(to_goal, Vec3::UnitX());
    } else if (ns < vmin) {
      nv *= vmin / ns;
    } else if (ns > vmax) {
      nv *= vmax / ns;
    }

    for (int k = 0; k < 3; ++k) {
      const double q = p[k] + nv[k] * dt;
      if (q < 0.0 || q > cfg.volume[k]) nv[k] = -nv[k];
    }
    next.nodes[i].velocity = nv;
  }
  return next;
}

/// Immutable per-node ground truth at a fixed step.
class GroundTruthTrace {
 public:
  GroundTruthTrace() = default;
  GroundTruthTrace(std::size_t n_nodes, std::size_t n_samples, double step_s, std::uint64_t seed)
      : n_nodes_(n_nodes), n_samples_(n_samples), step_s_(step_s), seed_(seed),
        pos_(n_nodes * n_samples, Vec3::Zero()), vel_(n_nodes * n_samples, Vec3::Zero()),
        phase_(n_nodes * n_samples, Phase::Outbound) {}

  std::size_t nodes() const { return n_nodes_; }
  std::size_t samples() const { return n_samples_; }
  double step_s() const { return step_s_; }
  std::uint64_t seed() const { return seed_; }

  const Vec3& position(std::size_t node, std::size_t t) const { return pos_[t * n_nodes_ + node]; }
  const Vec3& velocity(std::size_t node, std::size_t t) const { return vel_[t * n_nodes_ + node]; }
  Phase phase(std::size_t node, std::size_t t) const { return phase_[t * n_nodes_ + node]; }

  Vec3& position(std::size_t node, std::size_t t) { return pos_[t * n_nodes_ + node]; }
  Vec3& velocity(std::size_t node, std::size_t t) { return vel_[t * n_nodes_ + node]; }
  Phase& phase(std::size_t node, std::size_t t) { return phase_[t * n_nodes_ + node]; }

  /// First difference of velocity; zero at the last sample.
  Vec3 acceleration(std::size_t node, std::size_t t) const {
    if (t + 1 >= n_samples_) return Vec3::Zero();
    return (velocity(node, t + 1) - velocity(node, t)) / step_s_;
  }

  bool operator==(const GroundTruthTrace& o) const {
    return n_nodes_ == o.n_nodes_ && n_samples_ == o.n_samples_ && step_s_ == o.step_s_ &&
           seed_ == o.seed_ && pos_ == o.pos_ && vel_ == o.vel_ && phase_ == o.phase_;
  }

 private:
  std::size_t n_nodes_ = 0;
  std::size_t n_samples_ = 0;
  double step_s_ = 1.0;
  std::uint64_t seed_ = 0;
  std::vector<Vec3> pos_;
  std::vector<Vec3> vel_;
  std::vector<Phase> phase_;
};

/// Resolved geography of one trace.
struct FlockLayout {
  std::vector<Vec3> camps;
  Vec3 forage_center;
  std::vector<std::size_t> home;  // camp index per node
};

inline FlockLayout resolve_layout(const FlockConfig& cfg, Rng& rng) {
  FlockLayout out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double margin = cfg.forage_radius + cfg.camp_distance_max + 100.0;
  if (cfg.forage_center.hasNaN()) {
    const double x = margin + unit(rng) * std::max(0.0, cfg.volume.x() - 2 * margin);
    const double y = margin + unit(rng) * std::max(0.0, cfg.volume.y() - 2 * margin);
    const double z = cfg.altitude_min + unit(rng) * (cfg.altitude_max - cfg.altitude_min);
    out.forage_center = Vec3(x, y, z);
  } else {
    out.forage_center = cfg.forage_center;
  }
  if (cfg.base_camps.empty()) {
    const double pi = std::acos(-1.0);
    const double heading = unit(rng) * 2.0 * pi;
    for (int c = 0; c < 2; ++c) {
      // Camps sit on roughly opposite sides so the two groups converge.
      const double a = heading + c * pi + (unit(rng) - 0.5) * pi / 2.0;
      const double r = cfg.camp_distance_min + unit(rng) * (cfg.camp_distance_max - cfg.camp_distance_min);
      Vec3 camp = out.forage_center + r * Vec3(std::cos(a), std::sin(a), 0.0);
      camp.z() = cfg.altitude_min + unit(rng) * (cfg.altitude_max - cfg.altitude_min) * 0.25;
      camp = camp.cwiseMax(Vec3::Constant(1.0)).cwiseMin(cfg.volume - Vec3::Constant(1.0));
      out.camps.push_back(camp);
    }
  } else {
    out.camps = cfg.base_camps;
  }
  const auto n0 = static_cast<std::size_t>(std::llround(cfg.camp_split * cfg.n_nodes));
  for (std::size_t i = 0; i < cfg.n_nodes; ++i) out.home.push_back(i < n0 ? 0 : 1);
  return out;
}

/// Deterministic for a given (config, seed).
inline GroundTruthTrace generate_trace(const FlockConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, Stream::Movement);
  const FlockLayout layout = resolve_layout(cfg, rng);

  const std::size_t n = cfg.n_nodes;
  const std::size_t len = cfg.samples();
  GroundTruthTrace trace(n, len, cfg.step_s, seed);

  FlockState state;
  state.nodes.resize(n);
  state.wander.assign(n, Vec3::Zero());
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& camp = layout.camps[layout.home[i]];
    Vec3 off(jitter(rng), jitter(rng), 0.0);
    off.z() = 0.2 * jitter(rng);
    Vec3 p = camp + cfg.camp_scatter * off;
    p = p.cwiseMax(Vec3::Zero()).cwiseMin(cfg.volume);
    state.nodes[i].position = p;
    state.nodes[i].velocity = cfg.target_speed * detail::unit_or(layout.forage_center - p, Vec3::UnitX());
  }

  std::vector<Phase> phase(n, Phase::Outbound);
  std::vector<Steering> steer(n);
  const double return_time = cfg.return_time_fraction * cfg.duration_s;

  for (std::size_t t = 0; t < len; ++t) {
    const double now = static_cast<double>(t) * cfg.step_s;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& p = state.nodes[i].position;
      const Vec3& home = layout.camps[layout.home[i]];
      switch (phase[i]) {
        case Phase::Outbound:
          if ((p - layout.forage_center).head<2>().norm() < 0.5 * cfg.forage_radius) phase[i] = Phase::Forage;
          break;
        case Phase::Forage:
          if (now >= return_time) phase[i] = Phase::Return;
          break;
        case Phase::Return:
          if ((p - home).head<2>().norm() < 100.0) phase[i] = Phase::Roost;
          break;
        case Phase::Roost:
          break;
      }
      if (now >= return_time && phase[i] == Phase::Outbound) phase[i] = Phase::Return;
      trace.position(i, t) = p;
      trace.velocity(i, t) = state.nodes[i].velocity;
      trace.phase(i, t) = phase[i];

      Steering& s = steer[i];
      s.phase = phase[i];
      switch (phase[i]) {
        case Phase::Outbound:
        case Phase::Forage:
          s.goal = layout.forage_center;
          s.leash = cfg.forage_radius;
          break;
        case Phase::Return:
        case Phase::Roost:
          s.goal = home;
          s.leash = 300.0;
          break;
      }
    }
    if (t + 1 < len) state = boid_step(state, cfg, steer, rng);
  }
  return trace;
}

/// Single-linkage group count at time t.
inline std::size_t count_groups(const GroundTruthTrace& trace, std::size_t t, double link_m) {
  const std::size_t n = trace.nodes();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if ((trace.position(i, t) - trace.position(j, t)).norm() <= link_m) parent[find(i)] = find(j);
  std::size_t groups = 0;
  for (std::size_t i = 0; i < n; ++i) groups += find(i) == i;
  return groups;
}

struct Histogram {
  double bin_width = 1.0;
  std::vector<std::size_t> counts;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t total = 0;

  void add(double x) {
    const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(x / bin_width)));
    if (b >= counts.size()) counts.resize(b + 1, 0);
    ++counts[b];
    min = std::min(min, x);
    max = std::max(max, x);
    sum += x;
    ++total;
  }
  double mean() const { return total ? sum / static_cast<double>(total) : 0.0; }
};

struct TraceSummary {
  Histogram speed{0.25, {}};
  Histogram pairwise_distance{1.0, {}};
  std::vector<std::size_t> cluster_count;  // per sample, 50 m linkage
  double mean_speed = 0.0;
  double mean_speed_transit = 0.0;
  double median_nearest_neighbour = 0.0;
};

inline TraceSummary trace_statistics(const GroundTruthTrace& trace, double link_m = 50.0) {
  if (trace.samples() == 0 || trace.nodes() == 0)
    throw std::invalid_argument("trace_statistics: empty trace");
  TraceSummary s;
  const std::size_t n = trace.nodes();
  std::vector<double> nearest;
  nearest.reserve(n * trace.samples());
  double transit_sum = 0.0;
  std::size_t transit_count = 0;
  for (std::size_t t = 0; t < trace.samples(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double sp = trace.velocity(i, t).norm();
      s.speed.add(sp);
      if (is_transit(trace.phase(i, t))) {
        transit_sum += sp;
        ++transit_count;
      }
      double nn = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = (trace.position(i, t) - trace.position(j, t)).norm();
        nn = std::min(nn, d);
        if (j > i) s.pairwise_distance.add(d);
      }
      if (n > 1) nearest.push_back(nn);
    }
    s.cluster_count.push_back(count_groups(trace, t, link_m));
  }
  s.mean_speed = s.speed.mean();
  s.mean_speed_transit = transit_count ? transit_sum / static_cast<double>(transit_count) : 0.0;
  if (!nearest.empty()) {
    auto mid = nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2);
    std::nth_element(nearest.begin(), mid, nearest.end());
    s.median_nearest_neighbour = *mid;
  }
  return s;
}

/// Writes `# key=value` header lines, then `t,node_id,px,py,pz,vx,vy,vz` rows.
inline void write_trace_csv(std::ostream& os, const GroundTruthTrace& trace,
                            const std::vector<std::pair<std::string, std::string>>& header = {}) {
  os << "# seed=" << trace.seed() << "\n";
  os << "# nodes=" << trace.nodes() << "\n";
  os << "# samples=" << trace.samples() << "\n";
  os << "# step_s=" << trace.step_s() << "\n";
  for (const auto& [k, v] : header) os << "# " << k << "=" << v << "\n";
  os << "t,node_id,px,py,pz,vx,vy,vz\n";
  char buf[256];
  for (std::size_t t = 0; t < trace.samples(); ++t) {
    for (std::size_t i = 0; i < trace.nodes(); ++i) {
      const Vec3& p = trace.position(i, t);
      const Vec3& v = trace.velocity(i, t);
      std::snprintf(buf, sizeof buf, "%g,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                    static_cast<double>(t) * trace.step_s(), i, p.x(), p.y(), p.z(), v.x(), v.y(), v.z());
      os << buf;
    }
  }
}

inline GroundTruthTrace read_trace_csv(std::istream& is) {
  std::string line;
  std::uint64_t seed = 0;
  std::size_t nodes = 0, samples = 0;
  double step = 1.0;
  while (std::getline(is, line)) {
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "seed") seed = std::stoull(val);
      else if (key == "nodes") nodes = std::stoul(val);
      else if (key == "samples") samples = std::stoul(val);
      else if (key == "step_s") step = std::stod(val);
      continue;
    }
    break;  // column header
  }
  if (nodes == 0 || samples == 0) throw std::runtime_error("trace csv: missing nodes/samples header");
  GroundTruthTrace trace(nodes, samples, step, seed);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double t = 0;
    std::size_t id = 0;
    char c = 0;
    Vec3 p, v;
    ls >> t >> c >> id >> c >> p.x() >> c >> p.y() >> c >> p.z() >> c >> v.x() >> c >> v.y() >> c >> v.z();
    if (!ls || id >= nodes) throw std::runtime_error("trace csv: malformed row " + std::to_string(rows + 1));
    const auto ti = static_cast<std::size_t>(std::llround(t / step));
    if (ti >= samples) throw std::runtime_error("trace csv: time out of range in row " + std::to_string(rows + 1));
    trace.position(id, ti) = p;
    trace.velocity(id, ti) = v;
    ++rows;
  }
  if (rows != nodes * samples) throw std::runtime_error("trace csv: row count mismatch");
  return trace;
}

}  // namespace ctrack
