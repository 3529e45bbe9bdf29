#pragma once

// Tracking strategies run over a ground-truth trace: individual and
// cluster-based periodic sampling, cooperative Kalman filtering with and
// without inertial aiding, uncertainty-triggered (dynamic) variants, and the
// neighbour-request collaborative baseline.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ctrack/cluster.hpp"
#include "ctrack/energy.hpp"
#include "ctrack/estimation.hpp"
#include "ctrack/movement.hpp"
#include "ctrack/sensors.hpp"
#include "ctrack/types.hpp"

namespace ctrack {

enum class SchemeKind {
  IndividualPeriodic,
  ClusterStandard,
  ClusterCKF,
  ClusterCKFAccMag,
  DynamicCluster,
  DynamicCKF,
  DynamicCKFAccMag,
  DynamicBaselineVM,
  DynamicIndividual,
};

inline constexpr std::array kAllSchemes = {
    SchemeKind::IndividualPeriodic, SchemeKind::ClusterStandard,  SchemeKind::ClusterCKF,
    SchemeKind::ClusterCKFAccMag,   SchemeKind::DynamicCluster,   SchemeKind::DynamicCKF,
    SchemeKind::DynamicCKFAccMag,   SchemeKind::DynamicBaselineVM, SchemeKind::DynamicIndividual,
};

inline std::string_view scheme_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::IndividualPeriodic: return "individual";
    case SchemeKind::ClusterStandard: return "cluster";
    case SchemeKind::ClusterCKF: return "ckf";
    case SchemeKind::ClusterCKFAccMag: return "ckf_accmag";
    case SchemeKind::DynamicCluster: return "dyn_cluster";
    case SchemeKind::DynamicCKF: return "dyn_ckf";
    case SchemeKind::DynamicCKFAccMag: return "dyn_ckf_accmag";
    case SchemeKind::DynamicBaselineVM: return "vm_baseline";
    case SchemeKind::DynamicIndividual: return "dyn_individual";
  }
  return "?";
}

inline std::optional<SchemeKind> parse_scheme(std::string_view s) {
  for (SchemeKind k : kAllSchemes)
    if (scheme_name(k) == s) return k;
  return std::nullopt;
}

inline bool is_periodic(SchemeKind k) {
  return k == SchemeKind::IndividualPeriodic || k == SchemeKind::ClusterStandard ||
         k == SchemeKind::ClusterCKF || k == SchemeKind::ClusterCKFAccMag;
}

inline bool is_cluster_scheme(SchemeKind k) {
  return k != SchemeKind::IndividualPeriodic && k != SchemeKind::DynamicBaselineVM &&
         k != SchemeKind::DynamicIndividual;
}

struct SchemeConfig {
  SchemeKind kind = SchemeKind::IndividualPeriodic;
  std::optional<double> interval_s;
  std::optional<double> limit_m;
  double cluster_radius = 50.0;

  void validate(double track_s) const {
    const std::string who = "SchemeConfig(" + std::string(scheme_name(kind)) + ")";
    if (is_periodic(kind)) {
      if (!interval_s || limit_m) throw std::invalid_argument(who + ".interval_s: periodic schemes need interval_s only");
      if (*interval_s < 1.0 || *interval_s > track_s || *interval_s != std::floor(*interval_s))
        throw std::invalid_argument(who + ".interval_s: must be a whole number of seconds in [1, track length]");
    } else {
      if (!limit_m || interval_s) throw std::invalid_argument(who + ".limit_m: dynamic schemes need limit_m only");
      if (!(*limit_m > 0.0)) throw std::invalid_argument(who + ".limit_m: must be > 0");
    }
    if (!(cluster_radius > 0.0)) throw std::invalid_argument(who + ".cluster_radius: must be > 0");
  }
};

/// Everything a run needs besides the trace, scheme and seed.
struct SimParams {
  GpsNoiseParams gps;
  ImuParams imu;
  EnergyParams energy;
  ProtocolConfig protocol;
  MeasurementNoise measurement;

  // Inertial variant: blend a fix's velocity into the integrated one by
  // variance weighting instead of overwriting it.
  bool imu_velocity_fusion = true;
  double neighbour_velocity_sigma = 1.0;  // m/s, spread of velocities inside a cluster
  // Average the duty-cycled accelerometer samples taken each second.
  bool imu_average_duty_samples = true;
  // Grow Q as a velocity error held since the last correction would (var * (2k-1)).
  bool persistent_velocity_q = true;

  double vm_trigger_fraction = 0.9;
  double vm_distance_bound = 50.0;  // m, radio range as neighbour distance bound
  bool vm_adopt_broadcasts = true;

  bool score_ckf_interpolated = false;
  bool record_events = false;

  void validate() const {
    gps.validate();
    imu.validate();
    energy.validate();
    protocol.validate();
    if (measurement.kappa < 0.0) throw std::invalid_argument("SimParams.kappa: must be >= 0");
    if (neighbour_velocity_sigma < 0.0) throw std::invalid_argument("SimParams.neighbour_velocity_sigma: must be >= 0");
    if (!(vm_trigger_fraction > 0.0 && vm_trigger_fraction <= 1.0))
      throw std::invalid_argument("SimParams.vm_trigger_fraction: must be in (0,1]");
    if (vm_distance_bound < 0.0) throw std::invalid_argument("SimParams.vm_distance_bound: must be >= 0");
  }
};

/// Linear position-uncertainty growth since the last adopted fix.
struct UncertaintyTracker {
  double u_now = 0.0;
  double v_bar = 0.0;
  double t_last_update = 0.0;
  double e0 = 0.0;
  double elapsed = 0.0;
};

inline UncertaintyTracker step_uncertainty(UncertaintyTracker tr, double dt, double v_bar) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_uncertainty: dt must be > 0");
  tr.elapsed += dt;
  tr.v_bar = v_bar;
  tr.u_now = tr.e0 + tr.v_bar * tr.elapsed;
  return tr;
}

inline UncertaintyTracker reset_uncertainty(double t, double e0, double v_bar) {
  return UncertaintyTracker{e0, v_bar, t, e0, 0.0};
}

/// A cluster samples once the mean of its members' uncertainties reaches the limit.
inline bool mean_uncertainty_reached(std::span<const double> u, double limit) {
  if (u.empty()) return false;
  return std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size()) >= limit;
}

struct NodeResult {
  std::vector<Vec3> track;
  std::array<double, kEnergyCategories> energy_j{};
  double total_energy_j = 0.0;
  std::size_t fixes = 0;
  double alive_s = 0.0;
  std::optional<double> death_time;
  double mean_error_m = 0.0;
  bool conserved = true;
  std::size_t dropped_charges = 0;
};

struct ErrorMetrics {
  std::vector<double> per_node_mean;
  double mean = 0.0;
  double std = 0.0;
};

/// Per-second 3D error against the trace; every node-second weighs equally.
inline ErrorMetrics score_run(std::span<const std::vector<Vec3>> tracks, const GroundTruthTrace& trace) {
  if (tracks.size() != trace.nodes()) throw std::invalid_argument("score_run: node count mismatch");
  ErrorMetrics m;
  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].size() != trace.samples()) throw std::invalid_argument("score_run: track length mismatch");
    double node_sum = 0.0;
    for (std::size_t t = 0; t < trace.samples(); ++t) {
      const double e = (tracks[i][t] - trace.position(i, t)).norm();
      node_sum += e;
      sum += e;
      sumsq += e * e;
    }
    count += trace.samples();
    m.per_node_mean.push_back(trace.samples() ? node_sum / static_cast<double>(trace.samples()) : 0.0);
  }
  if (count) {
    m.mean = sum / static_cast<double>(count);
    m.std = std::sqrt(std::max(0.0, sumsq / static_cast<double>(count) - m.mean * m.mean));
  }
  return m;
}

struct RunResult {
  SchemeKind kind = SchemeKind::IndividualPeriodic;
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  std::vector<NodeResult> nodes;
  double mean_error_m = 0.0;
  double std_error_m = 0.0;
  double total_energy_j = 0.0;
  double mean_energy_j = 0.0;
  double mean_fixes = 0.0;
  double mean_clusters = 0.0;
  std::size_t total_fixes = 0;
  std::size_t tx_messages = 0;
  std::size_t rx_messages = 0;
  double end_time_s = 0.0;
  bool conserved = true;
  EventLog events;
};

namespace detail {

/// Shared per-run machinery: ledgers, bus, random streams, per-node records.
class RunContext {
 public:
  RunContext(const GroundTruthTrace& trace, const SimParams& params, std::uint64_t seed)
      : trace(trace), params(params), costs(params.energy),
        ledgers(trace.nodes(), EnergyLedger(Energy::from_joules(params.energy.battery_j))),
        bus(ledgers, costs, params.protocol.radius),
        gps_rng(make_rng(seed, Stream::Gps)), imu_rng(make_rng(seed, Stream::Imu)),
        protocol_rng(make_rng(seed, Stream::Protocol)), fixes(trace.nodes(), 0),
        death(trace.nodes()), samples(trace.nodes()) {
    params.validate();
  }

  std::size_t n() const { return trace.nodes(); }
  std::size_t len() const { return trace.samples(); }
  double dt() const { return trace.step_s(); }
  double time(std::size_t t) const { return static_cast<double>(t) * dt(); }
  bool alive(std::size_t i) const { return ledgers[i].alive(); }
  std::span<const Vec3> positions(std::size_t t) const { return {&trace.position(0, t), n()}; }

  bool any_alive() const {
    for (const auto& l : ledgers)
      if (l.alive()) return true;
    return false;
  }

  /// Standby/misc share for one second of every live node.
  void charge_second(std::size_t /*t*/, bool accmag) {
    for (std::size_t i = 0; i < n(); ++i) {
      if (!alive(i)) continue;
      ledgers[i].charge(EnergyCategory::Misc, costs.misc_second);
      if (accmag && alive(i)) ledgers[i].charge(EnergyCategory::AccMag, costs.accmag_second);
    }
  }

  GpsFix take_fix(std::size_t node, std::size_t t) {
    ledgers[node].charge(EnergyCategory::Gps, costs.gps_fix);
    ++fixes[node];
    NodeKinematics truth{trace.position(node, t), trace.velocity(node, t)};
    return sample_gps(truth, time(t), static_cast<NodeId>(node), params.gps, gps_rng);
  }

  void note_deaths(std::size_t t) {
    for (std::size_t i = 0; i < n(); ++i)
      if (!death[i] && !alive(i)) death[i] = time(t);
  }

  RunResult finish(SchemeKind kind, double sweep, std::uint64_t seed, std::vector<std::vector<Vec3>> tracks,
                   std::size_t end_tick, double mean_clusters, EventLog events) {
    RunResult r;
    r.kind = kind;
    r.sweep_value = sweep;
    r.seed = seed;
    const ErrorMetrics em = score_run(tracks, trace);
    r.mean_error_m = em.mean;
    r.std_error_m = em.std;
    r.nodes.resize(n());
    for (std::size_t i = 0; i < n(); ++i) {
      NodeResult& nr = r.nodes[i];
      nr.track = std::move(tracks[i]);
      for (std::size_t c = 0; c < kEnergyCategories; ++c)
        nr.energy_j[c] = ledgers[i].consumed(static_cast<EnergyCategory>(c)).joules();
      nr.total_energy_j = ledgers[i].consumed_total().joules();
      nr.fixes = fixes[i];
      nr.death_time = death[i];
      nr.alive_s = death[i] ? *death[i] : time(end_tick);
      nr.mean_error_m = em.per_node_mean[i];
      nr.conserved = ledgers[i].conserved();
      nr.dropped_charges = ledgers[i].dropped_charges();
      r.conserved = r.conserved && nr.conserved;
      r.total_energy_j += nr.total_energy_j;
      r.total_fixes += nr.fixes;
    }
    r.mean_energy_j = r.total_energy_j / static_cast<double>(n());
    r.mean_fixes = static_cast<double>(r.total_fixes) / static_cast<double>(n());
    r.mean_clusters = mean_clusters;
    r.tx_messages = bus.tx_count();
    r.rx_messages = bus.rx_count();
    r.end_time_s = time(end_tick);
    r.events = std::move(events);
    return r;
  }

  const GroundTruthTrace& trace;
  const SimParams& params;
  CostTable costs;
  std::vector<EnergyLedger> ledgers;
  MessageBus bus;
  Rng gps_rng;
  Rng imu_rng;
  Rng protocol_rng;
  std::vector<std::size_t> fixes;
  std::vector<std::optional<double>> death;
  std::vector<std::vector<TimedPosition>> samples;  // adopted positions per node
};

inline std::vector<std::vector<Vec3>> interpolate_all(const RunContext& ctx) {
  std::vector<std::vector<Vec3>> tracks;
  tracks.reserve(ctx.n());
  for (std::size_t i = 0; i < ctx.n(); ++i)
    tracks.push_back(interpolate_track(ctx.samples[i], ctx.len(), ctx.dt()));
  return tracks;
}

/// Per-node cooperative Kalman filter plus its velocity input.
struct NodeFilter {
  KfState kf;
  Vec3 velocity_var = Vec3::Zero();  // per-axis variance of the control input
  double sacc = 0.5;
  std::size_t since_velocity = 0;  // prediction steps since the control input was last corrected
};

inline NodeFilter init_filter(const GpsFix& fix) {
  NodeFilter f;
  f.kf.x = fix.position;
  f.kf.P = Mat3::Identity() * fix.pacc * fix.pacc;
  f.kf.u = fix.velocity;
  f.kf.t_last = fix.timestamp;
  f.velocity_var = Vec3::Constant(fix.sacc * fix.sacc);
  f.sacc = fix.sacc;
  return f;
}

class CkfBank {
 public:
  CkfBank(RunContext& ctx, bool with_imu)
      : ctx_(ctx), with_imu_(with_imu), model_(ctx.dt()), filters_(ctx.n()), posteriors_(ctx.n()) {}

  void init(std::size_t i, const GpsFix& fix) {
    filters_[i] = init_filter(fix);
    posteriors_[i].push_back({fix.timestamp, fix.position});
  }

  /// Prediction from t-1 to t for every live node, then the inertial
  /// velocity update with the acceleration over [t-1, t].
  void predict(std::size_t t) {
    const double sa = accel_noise_sigma(ctx_.params.imu);
    for (std::size_t i = 0; i < ctx_.n(); ++i) {
      if (!ctx_.alive(i)) continue;
      NodeFilter& f = filters_[i];
      ++f.since_velocity;
      Vec3 std_v = Vec3::Constant(f.sacc);
      if (ctx_.params.persistent_velocity_q)
        std_v = f.velocity_var.cwiseSqrt() * std::sqrt(2.0 * static_cast<double>(f.since_velocity) - 1.0);
      const Mat3 Q = build_q(std_v, model_.dt);
      f.kf = kf_predict(f.kf, f.kf.u, model_, Q);
      f.kf.t_last = ctx_.time(t);
      if (with_imu_) {
        const Vec3 truth = ctx_.trace.acceleration(i, t - 1);
        Vec3 a = Vec3::Zero();
        std::size_t m = 1;
        if (ctx_.params.imu_average_duty_samples)
          m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                           ctx_.params.imu.sample_rate_hz * ctx_.params.imu.duty_cycle * model_.dt)));
        for (std::size_t k = 0; k < m; ++k) a += sample_world_accel(truth, ctx_.params.imu, ctx_.imu_rng);
        a /= static_cast<double>(m);
        f.kf.u = imu_velocity_update(f.kf.u, a, model_.dt);
        f.velocity_var.array() += sa * sa / static_cast<double>(m) * model_.dt * model_.dt;
      }
    }
  }

  void update(std::size_t i, const GpsFix& fix, double radius, std::size_t t) {
    NodeFilter& f = filters_[i];
    const bool own = fix.sampler_id == i;
    const ReceiverContext rc{own, radius, ctx_.time(t) - fix.timestamp};
    f.kf = kf_update(f.kf, fix.position, model_, build_r(fix, rc, ctx_.params.measurement));
    f.sacc = fix.sacc;
    if (with_imu_ && ctx_.params.imu_velocity_fusion) {
      const double nv = own ? 0.0 : ctx_.params.neighbour_velocity_sigma;
      const double rv = fix.sacc * fix.sacc + nv * nv;
      for (int k = 0; k < 3; ++k) {
        const double g = f.velocity_var[k] / (f.velocity_var[k] + rv);
        f.kf.u[k] += g * (fix.velocity[k] - f.kf.u[k]);
        f.velocity_var[k] *= (1.0 - g);
      }
    } else {
      const double nv = own ? 0.0 : ctx_.params.neighbour_velocity_sigma;
      f.kf.u = fix.velocity;
      f.velocity_var = Vec3::Constant(fix.sacc * fix.sacc + nv * nv);
    }
    f.since_velocity = 0;
    posteriors_[i].push_back({ctx_.time(t), f.kf.x});
  }

  const Vec3& estimate(std::size_t i) const { return filters_[i].kf.x; }
  const KfState& state(std::size_t i) const { return filters_[i].kf; }
  const std::vector<TimedPosition>& posteriors(std::size_t i) const { return posteriors_[i]; }

 private:
  RunContext& ctx_;
  bool with_imu_;
  KfModel model_;
  std::vector<NodeFilter> filters_;
  std::vector<std::vector<TimedPosition>> posteriors_;
};

enum class Estimator { Hold, Ckf, CkfImu };

inline Estimator estimator_for(SchemeKind k) {
  switch (k) {
    case SchemeKind::ClusterCKF:
    case SchemeKind::DynamicCKF:
      return Estimator::Ckf;
    case SchemeKind::ClusterCKFAccMag:
    case SchemeKind::DynamicCKFAccMag:
      return Estimator::CkfImu;
    default:
      return Estimator::Hold;
  }
}

/// Cluster-based runner shared by the periodic and dynamic cluster schemes.
inline RunResult run_cluster(const GroundTruthTrace& trace, const SchemeConfig& sc, const SimParams& base,
                             std::uint64_t seed) {
  SimParams params = base;
  params.protocol.radius = sc.cluster_radius;
  sc.validate(static_cast<double>(trace.samples()) * trace.step_s());
  RunContext ctx(trace, params, seed);
  const Estimator est = estimator_for(sc.kind);
  const bool periodic = is_periodic(sc.kind);
  const bool use_kf = est != Estimator::Hold;
  const double radius = sc.cluster_radius;
  const std::size_t interval = periodic ? static_cast<std::size_t>(std::llround(*sc.interval_s / ctx.dt())) : 0;
  const double limit = periodic ? 0.0 : *sc.limit_m;

  EventLog events;
  ClusterProtocol proto(params.protocol, ctx.bus, params.record_events ? &events : nullptr);
  CkfBank bank(ctx, est == Estimator::CkfImu);
  std::vector<UncertaintyTracker> unc(ctx.n());
  std::vector<std::vector<Vec3>> kf_tracks;
  if (use_kf) kf_tracks.assign(ctx.n(), std::vector<Vec3>(ctx.len(), Vec3::Zero()));

  // Initial lock on every node, then cluster formation.
  ctx.charge_second(0, est == Estimator::CkfImu);
  for (std::size_t i = 0; i < ctx.n(); ++i) {
    if (!ctx.alive(i)) continue;
    const GpsFix fix = ctx.take_fix(i, 0);
    ctx.samples[i].push_back({0.0, fix.position});
    unc[i] = reset_uncertainty(0.0, fix.pacc, fix.velocity.norm());
    if (use_kf) {
      bank.init(i, fix);
      kf_tracks[i][0] = fix.position;
    }
  }
  proto.initialize(ctx.positions(0), ctx.protocol_rng, 0.0);
  double cluster_sum = static_cast<double>(proto.clusters().size());
  std::size_t end_tick = ctx.len() - 1;

  for (std::size_t t = 1; t < ctx.len(); ++t) {
    const double now = ctx.time(t);
    const auto pos = ctx.positions(t);
    ctx.charge_second(t, est == Estimator::CkfImu);
    if (use_kf) bank.predict(t);
    for (std::size_t i = 0; i < ctx.n(); ++i)
      if (ctx.alive(i)) unc[i] = step_uncertainty(unc[i], ctx.dt(), unc[i].v_bar);

    for (std::size_t ci = 0; ci < proto.clusters().size(); ++ci) {
      const ClusterState& c = proto.clusters()[ci];
      bool trigger = false;
      if (periodic) {
        trigger = t % interval == 0;
      } else {
        std::vector<double> u;
        for (NodeId m : c.members)
          if (ctx.alive(m)) u.push_back(unc[m].u_now);
        trigger = mean_uncertainty_reached(u, limit);
      }
      if (!trigger || !ctx.alive(c.head)) continue;

      if (use_kf) {
        // Each member asks its head for a cooperative measurement.
        const std::vector<NodeId> members = c.members;
        for (NodeId m : members)
          if (m != c.head) ctx.bus.unicast({MessageKind::FixRequest, m, {}}, c.head, pos);
      }
      const auto sampler = proto.next_sampler(ci, pos, ctx.protocol_rng, now);
      if (!sampler) continue;
      const GpsFix fix = ctx.take_fix(*sampler, t);
      const DeliveryRecord rec = proto.distribute_fix(ci, fix, pos, now);
      for (NodeId h : rec.holders) {
        if (!ctx.alive(h)) continue;
        const bool own = h == *sampler;
        ctx.samples[h].push_back({now, fix.position});
        unc[h] = reset_uncertainty(now, fix.pacc + (own ? 0.0 : radius), fix.velocity.norm());
        if (use_kf) bank.update(h, fix, radius, t);
      }
    }

    if (use_kf)
      for (std::size_t i = 0; i < ctx.n(); ++i)
        kf_tracks[i][t] = bank.estimate(i);  // dead nodes keep their last estimate

    ctx.note_deaths(t);
    proto.tick_membership(pos, ctx.protocol_rng, now);
    cluster_sum += static_cast<double>(proto.clusters().size());
    if (!ctx.any_alive()) {
      end_tick = t;
      if (use_kf)
        for (std::size_t i = 0; i < ctx.n(); ++i)
          std::fill(kf_tracks[i].begin() + static_cast<std::ptrdiff_t>(t) + 1, kf_tracks[i].end(), bank.estimate(i));
      break;
    }
  }

  std::vector<std::vector<Vec3>> tracks;
  if (!use_kf) {
    tracks = interpolate_all(ctx);
  } else if (params.score_ckf_interpolated) {
    for (std::size_t i = 0; i < ctx.n(); ++i)
      tracks.push_back(interpolate_track(bank.posteriors(i), ctx.len(), ctx.dt()));
  } else {
    tracks = std::move(kf_tracks);
  }
  const double sweep = periodic ? *sc.interval_s : *sc.limit_m;
  return ctx.finish(sc.kind, sweep, seed, std::move(tracks), end_tick,
                    cluster_sum / static_cast<double>(end_tick + 1), std::move(events));
}

}  // namespace detail

/// Every node fixes its own GPS every `interval_s`; scored on the linearly
/// interpolated track.
inline RunResult run_individual_periodic(const GroundTruthTrace& trace, double interval_s,
                                         const SimParams& params, std::uint64_t seed) {
  SchemeConfig sc{SchemeKind::IndividualPeriodic, interval_s, std::nullopt};
  sc.validate(static_cast<double>(trace.samples()) * trace.step_s());
  detail::RunContext ctx(trace, params, seed);
  const auto interval = static_cast<std::size_t>(std::llround(interval_s / ctx.dt()));
  std::size_t end_tick = ctx.len() - 1;
  for (std::size_t t = 0; t < ctx.len(); ++t) {
    ctx.charge_second(t, false);
    if (t % interval == 0)
      for (std::size_t i = 0; i < ctx.n(); ++i)
        if (ctx.alive(i)) ctx.samples[i].push_back({ctx.time(t), ctx.take_fix(i, t).position});
    ctx.note_deaths(t);
    if (!ctx.any_alive()) {
      end_tick = t;
      break;
    }
  }
  return ctx.finish(sc.kind, interval_s, seed, detail::interpolate_all(ctx), end_tick, 0.0, {});
}

inline RunResult run_cluster_standard(const GroundTruthTrace& trace, double interval_s, const SimParams& params,
                                      std::uint64_t seed, double radius = 50.0) {
  return detail::run_cluster(trace, {SchemeKind::ClusterStandard, interval_s, std::nullopt, radius}, params, seed);
}

inline RunResult run_cluster_ckf(const GroundTruthTrace& trace, double interval_s, const SimParams& params,
                                 std::uint64_t seed, bool with_imu, double radius = 50.0) {
  const SchemeKind k = with_imu ? SchemeKind::ClusterCKFAccMag : SchemeKind::ClusterCKF;
  return detail::run_cluster(trace, {k, interval_s, std::nullopt, radius}, params, seed);
}

enum class DynamicVariant { Standard, Ckf, CkfImu };

inline RunResult run_dynamic_cluster(const GroundTruthTrace& trace, double limit_m, const SimParams& params,
                                     std::uint64_t seed, DynamicVariant variant, double radius = 50.0) {
  const SchemeKind k = variant == DynamicVariant::Standard ? SchemeKind::DynamicCluster
                       : variant == DynamicVariant::Ckf    ? SchemeKind::DynamicCKF
                                                           : SchemeKind::DynamicCKFAccMag;
  return detail::run_cluster(trace, {k, std::nullopt, limit_m, radius}, params, seed);
}

/// Each node fixes its own GPS whenever its uncertainty reaches the limit.
inline RunResult run_dynamic_individual(const GroundTruthTrace& trace, double limit_m, const SimParams& params,
                                        std::uint64_t seed) {
  SchemeConfig sc{SchemeKind::DynamicIndividual, std::nullopt, limit_m};
  sc.validate(static_cast<double>(trace.samples()) * trace.step_s());
  detail::RunContext ctx(trace, params, seed);
  std::vector<UncertaintyTracker> unc(ctx.n());
  std::size_t end_tick = ctx.len() - 1;
  for (std::size_t t = 0; t < ctx.len(); ++t) {
    ctx.charge_second(t, false);
    for (std::size_t i = 0; i < ctx.n(); ++i) {
      if (!ctx.alive(i)) continue;
      if (t > 0) unc[i] = step_uncertainty(unc[i], ctx.dt(), unc[i].v_bar);
      if (t == 0 || unc[i].u_now >= limit_m) {
        const GpsFix fix = ctx.take_fix(i, t);
        ctx.samples[i].push_back({ctx.time(t), fix.position});
        unc[i] = reset_uncertainty(ctx.time(t), fix.pacc, fix.velocity.norm());
      }
    }
    ctx.note_deaths(t);
    if (!ctx.any_alive()) {
      end_tick = t;
      break;
    }
  }
  return ctx.finish(sc.kind, limit_m, seed, detail::interpolate_all(ctx), end_tick, 0.0, {});
}

/// Neighbour-request collaborative baseline: near the limit a node asks its
/// radio neighbourhood for a better estimate; a fruitful reply is adopted,
/// otherwise the node fixes its own GPS and broadcasts the new coordinates.
inline RunResult run_baseline_vm(const GroundTruthTrace& trace, double limit_m, const SimParams& params,
                                 std::uint64_t seed) {
  SchemeConfig sc{SchemeKind::DynamicBaselineVM, std::nullopt, limit_m};
  sc.validate(static_cast<double>(trace.samples()) * trace.step_s());
  detail::RunContext ctx(trace, params, seed);
  EventLog events;
  const double trigger = params.vm_trigger_fraction * limit_m;
  const double bound = params.vm_distance_bound;
  std::vector<UncertaintyTracker> unc(ctx.n());
  std::vector<Vec3> estimate(ctx.n(), Vec3::Zero());
  std::vector<NodeId> everyone(ctx.n());
  std::iota(everyone.begin(), everyone.end(), 0);
  std::size_t end_tick = ctx.len() - 1;

  auto adopt = [&](std::size_t i, std::size_t t, const Vec3& p, double e0, double v_bar) {
    estimate[i] = p;
    ctx.samples[i].push_back({ctx.time(t), p});
    unc[i] = reset_uncertainty(ctx.time(t), e0, v_bar);
  };

  for (std::size_t t = 0; t < ctx.len(); ++t) {
    const auto pos = ctx.positions(t);
    ctx.charge_second(t, false);
    for (std::size_t i = 0; i < ctx.n(); ++i) {
      if (!ctx.alive(i)) continue;
      if (t == 0) {
        const GpsFix fix = ctx.take_fix(i, t);
        adopt(i, t, fix.position, fix.pacc, fix.velocity.norm());
        continue;
      }
      unc[i] = step_uncertainty(unc[i], ctx.dt(), unc[i].v_bar);
    }
    if (t == 0) {
      ctx.note_deaths(t);
      continue;
    }
    for (std::size_t i = 0; i < ctx.n(); ++i) {
      if (!ctx.alive(i) || unc[i].u_now < trigger) continue;
      const auto id = static_cast<NodeId>(i);
      const auto heard = ctx.bus.broadcast({MessageKind::FixRequest, id, {}}, everyone, pos);
      std::optional<NodeId> best;
      for (NodeId j : heard) {
        if (unc[j].u_now + bound > limit_m) continue;
        ctx.bus.unicast({MessageKind::FixReport, j, {}}, id, pos);
        if (!best || unc[j].u_now < unc[*best].u_now) best = j;
      }
      if (best) {
        adopt(i, t, estimate[*best], unc[*best].u_now + bound, unc[*best].v_bar);
        if (params.record_events) events.add(ctx.time(t), "vm_adopt", id, *best);
        continue;
      }
      const GpsFix fix = ctx.take_fix(i, t);
      adopt(i, t, fix.position, fix.pacc, fix.velocity.norm());
      const auto got = ctx.bus.broadcast({MessageKind::FixBroadcast, id, fix}, everyone, pos);
      if (params.record_events) events.add(ctx.time(t), "vm_fix", id, id);
      if (!params.vm_adopt_broadcasts) continue;
      for (NodeId j : got)
        if (fix.pacc + bound < unc[j].u_now) adopt(j, t, fix.position, fix.pacc + bound, fix.velocity.norm());
    }
    ctx.note_deaths(t);
    if (!ctx.any_alive()) {
      end_tick = t;
      break;
    }
  }
  return ctx.finish(sc.kind, limit_m, seed, detail::interpolate_all(ctx), end_tick, 0.0, std::move(events));
}

/// Dispatches on the scheme kind.
inline RunResult run_scheme(const GroundTruthTrace& trace, const SchemeConfig& sc, const SimParams& params,
                            std::uint64_t seed) {
  switch (sc.kind) {
    case SchemeKind::IndividualPeriodic:
      if (!sc.interval_s) break;
      return run_individual_periodic(trace, *sc.interval_s, params, seed);
    case SchemeKind::DynamicBaselineVM:
      if (!sc.limit_m) break;
      return run_baseline_vm(trace, *sc.limit_m, params, seed);
    case SchemeKind::DynamicIndividual:
      if (!sc.limit_m) break;
      return run_dynamic_individual(trace, *sc.limit_m, params, seed);
    default:
      return detail::run_cluster(trace, sc, params, seed);
  }
  sc.validate(static_cast<double>(trace.samples()) * trace.step_s());
  throw std::invalid_argument("run_scheme: incomplete config");
}

}  // namespace ctrack
