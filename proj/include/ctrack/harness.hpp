#pragma once

// Experiment plans: sweep schemes over sampling intervals or uncertainty
// limits, repeat on paired seeds, aggregate, and write CSV results.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "ctrack/movement.hpp"
#include "ctrack/schemes.hpp"

namespace ctrack {

enum class Category { Periodic, Dynamic, Both };

inline Category parse_category(std::string_view s) {
  if (s == "periodic") return Category::Periodic;
  if (s == "dynamic") return Category::Dynamic;
  if (s == "both") return Category::Both;
  throw std::invalid_argument("category: expected periodic|dynamic|both, got '" + std::string(s) + "'");
}

inline bool in_category(SchemeKind k, Category c) {
  return c == Category::Both || (c == Category::Periodic) == is_periodic(k);
}

inline std::vector<double> default_intervals() {
  std::vector<double> v;
  for (int s = 10; s <= 100; s += 10) v.push_back(s);
  return v;
}

inline std::vector<double> default_limits() {
  std::vector<double> v;
  for (int m = 50; m <= 450; m += 50) v.push_back(m);
  return v;
}

inline std::vector<SchemeKind> default_schemes(Category c) {
  std::vector<SchemeKind> out;
  for (SchemeKind k : kAllSchemes)
    if (k != SchemeKind::DynamicIndividual && in_category(k, c)) out.push_back(k);
  return out;
}

struct ExperimentPlan {
  std::vector<SchemeKind> schemes = default_schemes(Category::Both);
  std::vector<double> intervals = default_intervals();
  std::vector<double> limits = default_limits();
  std::size_t repetitions = 20;
  std::uint64_t base_seed = 0;
  double cluster_radius = 50.0;
  FlockConfig movement;
  SimParams sim;
  std::string output_dir;  // empty: keep results in memory only
  bool per_run_files = true;
  bool emit_trace = false;
  bool emit_events = false;

  bool has_periodic() const {
    return std::any_of(schemes.begin(), schemes.end(), [](SchemeKind k) { return is_periodic(k); });
  }
  bool has_dynamic() const {
    return std::any_of(schemes.begin(), schemes.end(), [](SchemeKind k) { return !is_periodic(k); });
  }

  void validate() const {
    if (schemes.empty()) throw std::invalid_argument("ExperimentPlan.schemes: empty");
    if (repetitions < 1) throw std::invalid_argument("ExperimentPlan.repetitions: must be >= 1");
    if (has_periodic() && intervals.empty()) throw std::invalid_argument("ExperimentPlan.intervals: empty");
    if (has_dynamic() && limits.empty()) throw std::invalid_argument("ExperimentPlan.limits: empty");
    movement.validate();
    sim.validate();
    const double track = movement.duration_s;
    for (SchemeKind k : schemes) {
      const auto& sweep = is_periodic(k) ? intervals : limits;
      for (double v : sweep) {
        SchemeConfig sc{k, std::nullopt, std::nullopt, cluster_radius};
        (is_periodic(k) ? sc.interval_s : sc.limit_m) = v;
        sc.validate(track);
      }
    }
  }
};

/// Keeps only the schemes of one category.
inline void restrict_category(ExperimentPlan& plan, Category c) {
  std::erase_if(plan.schemes, [c](SchemeKind k) { return !in_category(k, c); });
}

// ---- config file ----------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || trim(v.substr(used)).size() != 0) throw std::invalid_argument(key + ": not a number: '" + v + "'");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d < 0.0 || d != std::floor(d)) throw std::invalid_argument(key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true/false");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

using Setter = std::function<void(ExperimentPlan&, const std::string& key, const std::string& value)>;

inline Setter num(double ExperimentPlan::*m) {
  return [m](ExperimentPlan& p, const std::string& k, const std::string& v) { p.*m = parse_double(k, v); };
}

template <class F>
Setter real(F field) {
  return [field](ExperimentPlan& p, const std::string& k, const std::string& v) { field(p) = parse_double(k, v); };
}

template <class F>
Setter flag(F field) {
  return [field](ExperimentPlan& p, const std::string& k, const std::string& v) { field(p) = parse_bool(k, v); };
}

inline const std::map<std::string, Setter>& config_keys() {
  using P = ExperimentPlan;
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> m;
    m["schemes"] = [](P& p, const std::string& k, const std::string& v) {
      p.schemes.clear();
      for (const auto& s : split_list(v)) {
        auto kind = parse_scheme(s);
        if (!kind) throw std::invalid_argument(k + ": unknown scheme '" + s + "'");
        p.schemes.push_back(*kind);
      }
    };
    m["intervals"] = [](P& p, const std::string& k, const std::string& v) { p.intervals = parse_doubles(k, v); };
    m["limits"] = [](P& p, const std::string& k, const std::string& v) { p.limits = parse_doubles(k, v); };
    m["repetitions"] = [](P& p, const std::string& k, const std::string& v) { p.repetitions = parse_uint(k, v); };
    m["base_seed"] = [](P& p, const std::string& k, const std::string& v) { p.base_seed = parse_uint(k, v); };
    m["cluster_radius"] = num(&P::cluster_radius);
    m["output_dir"] = [](P& p, const std::string&, const std::string& v) { p.output_dir = v; };
    m["per_run_files"] = flag([](P& p) -> bool& { return p.per_run_files; });

    // movement
    m["movement.n_nodes"] = [](P& p, const std::string& k, const std::string& v) { p.movement.n_nodes = parse_uint(k, v); };
    m["movement.duration_s"] = real([](P& p) -> double& { return p.movement.duration_s; });
    m["movement.step_s"] = real([](P& p) -> double& { return p.movement.step_s; });
    m["movement.target_speed"] = real([](P& p) -> double& { return p.movement.target_speed; });
    m["movement.target_spacing"] = real([](P& p) -> double& { return p.movement.target_spacing; });
    m["movement.volume_x"] = real([](P& p) -> double& { return p.movement.volume.x(); });
    m["movement.volume_y"] = real([](P& p) -> double& { return p.movement.volume.y(); });
    m["movement.volume_z"] = real([](P& p) -> double& { return p.movement.volume.z(); });
    m["movement.forage_radius"] = real([](P& p) -> double& { return p.movement.forage_radius; });
    m["movement.camp_distance_min"] = real([](P& p) -> double& { return p.movement.camp_distance_min; });
    m["movement.camp_distance_max"] = real([](P& p) -> double& { return p.movement.camp_distance_max; });
    m["movement.camp_scatter"] = real([](P& p) -> double& { return p.movement.camp_scatter; });
    m["movement.camp_split"] = real([](P& p) -> double& { return p.movement.camp_split; });
    m["movement.altitude_min"] = real([](P& p) -> double& { return p.movement.altitude_min; });
    m["movement.altitude_max"] = real([](P& p) -> double& { return p.movement.altitude_max; });
    m["movement.w_separation"] = real([](P& p) -> double& { return p.movement.w_separation; });
    m["movement.w_alignment"] = real([](P& p) -> double& { return p.movement.w_alignment; });
    m["movement.w_cohesion"] = real([](P& p) -> double& { return p.movement.w_cohesion; });
    m["movement.w_goal"] = real([](P& p) -> double& { return p.movement.w_goal; });
    m["movement.w_speed"] = real([](P& p) -> double& { return p.movement.w_speed; });
    m["movement.perception_radius"] = real([](P& p) -> double& { return p.movement.perception_radius; });
    m["movement.wander_tau_s"] = real([](P& p) -> double& { return p.movement.wander_tau_s; });
    m["movement.wander_sigma"] = real([](P& p) -> double& { return p.movement.wander_sigma; });
    m["movement.wander_shared"] = real([](P& p) -> double& { return p.movement.wander_shared; });
    m["movement.wander_vertical"] = real([](P& p) -> double& { return p.movement.wander_vertical; });
    m["movement.return_time_fraction"] = real([](P& p) -> double& { return p.movement.return_time_fraction; });

    // energy
    m["energy.p_gps"] = real([](P& p) -> double& { return p.sim.energy.p_gps; });
    m["energy.t_gps_lock"] = real([](P& p) -> double& { return p.sim.energy.t_gps_lock; });
    m["energy.p_mcu"] = real([](P& p) -> double& { return p.sim.energy.p_mcu; });
    m["energy.p_radio"] = real([](P& p) -> double& { return p.sim.energy.p_radio; });
    m["energy.packet_bits"] = real([](P& p) -> double& { return p.sim.energy.packet_bits; });
    m["energy.channel_bit_rate"] = real([](P& p) -> double& { return p.sim.energy.channel_bit_rate; });
    m["energy.t_rt"] = real([](P& p) -> double& { return p.sim.energy.t_rt_rounded; });
    m["energy.exact_t_rt"] = flag([](P& p) -> bool& { return p.sim.energy.exact_t_rt; });
    m["energy.i_nm"] = real([](P& p) -> double& { return p.sim.energy.i_nm; });
    m["energy.i_sm"] = real([](P& p) -> double& { return p.sim.energy.i_sm; });
    m["energy.p_nm"] = real([](P& p) -> double& { return p.sim.energy.p_nm; });
    m["energy.p_sm"] = real([](P& p) -> double& { return p.sim.energy.p_sm; });
    m["energy.dc_accmag"] = real([](P& p) -> double& { return p.sim.energy.dc_accmag; });
    m["energy.p_sb"] = real([](P& p) -> double& { return p.sim.energy.p_sb; });
    m["energy.e_misc"] = real([](P& p) -> double& { return p.sim.energy.e_misc; });
    m["energy.track_s"] = real([](P& p) -> double& { return p.sim.energy.track_s; });
    m["energy.battery_j"] = real([](P& p) -> double& { return p.sim.energy.battery_j; });

    // sensors
    m["gps.sigma_pos"] = real([](P& p) -> double& { return p.sim.gps.sigma_pos; });
    m["gps.sigma_vel"] = real([](P& p) -> double& { return p.sim.gps.sigma_vel; });
    m["imu.noise_density_ug"] = real([](P& p) -> double& { return p.sim.imu.noise_density_ug; });
    m["imu.bandwidth_hz"] = real([](P& p) -> double& { return p.sim.imu.bandwidth_hz; });
    m["imu.sample_rate_hz"] = real([](P& p) -> double& { return p.sim.imu.sample_rate_hz; });
    m["imu.duty_cycle"] = real([](P& p) -> double& { return p.sim.imu.duty_cycle; });

    // protocol and estimation
    m["protocol.election_timer_min_s"] = real([](P& p) -> double& { return p.sim.protocol.election.timer_min_s; });
    m["protocol.election_timer_max_s"] = real([](P& p) -> double& { return p.sim.protocol.election.timer_max_s; });
    m["protocol.battery_exponent"] = real([](P& p) -> double& { return p.sim.protocol.battery_exponent; });
    m["protocol.schedule_horizon"] = [](P& p, const std::string& k, const std::string& v) {
      p.sim.protocol.schedule_horizon = parse_uint(k, v);
    };
    m["protocol.max_missed"] = [](P& p, const std::string& k, const std::string& v) {
      p.sim.protocol.max_missed = static_cast<int>(parse_uint(k, v));
    };
    m["estimation.kappa"] = real([](P& p) -> double& { return p.sim.measurement.kappa; });
    m["estimation.staleness_gain"] = real([](P& p) -> double& { return p.sim.measurement.staleness_gain; });
    m["estimation.imu_velocity_fusion"] = flag([](P& p) -> bool& { return p.sim.imu_velocity_fusion; });
    m["estimation.neighbour_velocity_sigma"] = real([](P& p) -> double& { return p.sim.neighbour_velocity_sigma; });
    m["estimation.imu_average_duty_samples"] = flag([](P& p) -> bool& { return p.sim.imu_average_duty_samples; });
    m["estimation.persistent_velocity_q"] = flag([](P& p) -> bool& { return p.sim.persistent_velocity_q; });
    m["estimation.score_ckf_interpolated"] = flag([](P& p) -> bool& { return p.sim.score_ckf_interpolated; });
    m["vm.trigger_fraction"] = real([](P& p) -> double& { return p.sim.vm_trigger_fraction; });
    m["vm.distance_bound"] = real([](P& p) -> double& { return p.sim.vm_distance_bound; });
    m["vm.adopt_broadcasts"] = flag([](P& p) -> bool& { return p.sim.vm_adopt_broadcasts; });
    return m;
  }();
  return keys;
}

}  // namespace detail

/// Flat `key = value` config; `#` starts a comment. Unknown keys are errors.
inline ExperimentPlan parse_config(std::istream& in, ExperimentPlan plan = {}) {
  const auto& keys = detail::config_keys();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(plan, key, value);
  }
  return plan;
}

inline ExperimentPlan load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  return parse_config(in);
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::config_keys()) out.push_back(k);
  return out;
}

// ---- results ----------------------------------------------------------------

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct NodeRow {
  double mean_error_m = 0.0;
  std::array<double, kEnergyCategories> energy_j{};
  std::size_t fixes = 0;
  double alive_s = 0.0;
};

/// What the harness keeps from one run (tracks are dropped).
struct RunSummary {
  SchemeKind kind = SchemeKind::IndividualPeriodic;
  double sweep_value = 0.0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  double mean_energy_j = 0.0;
  double mean_error_m = 0.0;
  double mean_fixes = 0.0;
  double mean_clusters = 0.0;
  bool conserved = true;
  std::vector<NodeRow> nodes;
};

inline RunSummary summarize(const RunResult& r, std::size_t rep) {
  RunSummary s{r.kind, r.sweep_value, rep, r.seed, r.mean_energy_j, r.mean_error_m, r.mean_fixes, r.mean_clusters,
               r.conserved, {}};
  for (const auto& n : r.nodes) s.nodes.push_back({n.mean_error_m, n.energy_j, n.fixes, n.alive_s});
  return s;
}

inline void write_run_csv(std::ostream& os, const RunSummary& s) {
  os << "node_id,mean_error_m,energy_gps_j,energy_tx_j,energy_rx_j,energy_accmag_j,energy_misc_j,fixes,alive_s\n";
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const NodeRow& n = s.nodes[i];
    os << i << ',' << fmt6(n.mean_error_m);
    for (double e : n.energy_j) os << ',' << fmt6(e);
    os << ',' << n.fixes << ',' << fmt6(n.alive_s) << '\n';
  }
}

struct AggregateRow {
  SchemeKind kind = SchemeKind::IndividualPeriodic;
  double sweep_value = 0.0;
  double mean_energy_j = 0.0;
  double std_energy_j = 0.0;
  double mean_error_m = 0.0;
  double std_error_m = 0.0;
  double mean_fixes = 0.0;
  double mean_clusters = 0.0;
  std::size_t runs = 0;
  std::vector<double> rep_energy_j;  // repetition-level values, in seed order
  std::vector<double> rep_error_m;
};

/// Mean and sample (n-1) standard deviation; the std of a single value is 0.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline AggregateRow aggregate(SchemeKind kind, double sweep, const std::vector<const RunSummary*>& runs) {
  AggregateRow row;
  row.kind = kind;
  row.sweep_value = sweep;
  row.runs = runs.size();
  std::vector<double> fixes, clusters;
  for (const RunSummary* r : runs) {
    row.rep_energy_j.push_back(r->mean_energy_j);
    row.rep_error_m.push_back(r->mean_error_m);
    fixes.push_back(r->mean_fixes);
    clusters.push_back(r->mean_clusters);
  }
  std::tie(row.mean_energy_j, row.std_energy_j) = mean_std(row.rep_energy_j);
  std::tie(row.mean_error_m, row.std_error_m) = mean_std(row.rep_error_m);
  row.mean_fixes = mean_std(fixes).first;
  row.mean_clusters = mean_std(clusters).first;
  return row;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "scheme,sweep_value,mean_energy_j,std_energy_j,mean_error_m,std_error_m,mean_fixes,mean_clusters\n";
  for (const auto& r : rows)
    os << scheme_name(r.kind) << ',' << fmt6(r.sweep_value) << ',' << fmt6(r.mean_energy_j) << ','
       << fmt6(r.std_energy_j) << ',' << fmt6(r.mean_error_m) << ',' << fmt6(r.std_error_m) << ','
       << fmt6(r.mean_fixes) << ',' << fmt6(r.mean_clusters) << '\n';
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write: " + tmp.string());
    body(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot write: " + path.string() + " (" + ec.message() + ")");
}

inline std::string cell_stem(SchemeKind k, double sweep, std::size_t rep) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_%g_rep%03zu", std::string(scheme_name(k)).c_str(), sweep, rep);
  return buf;
}

struct PlanResult {
  std::vector<AggregateRow> rows;  // plan order: scheme, then sweep value
  std::vector<RunSummary> runs;    // rows.size() * repetitions, same order, rep innermost
};

struct RunOptions {
  std::size_t jobs = 1;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

inline void prepare_output_dir(const ExperimentPlan& plan) {
  namespace fs = std::filesystem;
  if (plan.output_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(plan.output_dir, ec);
  for (const char* sub : {"runs", "traces", "events"}) {
    if (ec) break;
    const bool want = std::string(sub) == "runs" ? plan.per_run_files
                      : std::string(sub) == "traces" ? plan.emit_trace
                                                     : plan.emit_events;
    if (want) fs::create_directories(fs::path(plan.output_dir) / sub, ec);
  }
  if (ec || !fs::is_directory(plan.output_dir))
    throw std::runtime_error("output directory not writable: " + plan.output_dir);
  const fs::path probe = fs::path(plan.output_dir) / ".write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw std::runtime_error("output directory not writable: " + plan.output_dir);
  }
  fs::remove(probe, ec);
}

/// Runs every (scheme, sweep value) cell for each repetition. Repetition i
/// uses seed base_seed + i for both its trace and its runs, so all schemes
/// see the same flock. Repetitions are distributed over `jobs` threads; the
/// output does not depend on the thread count.
inline PlanResult run_plan(const ExperimentPlan& plan, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  plan.validate();
  prepare_output_dir(plan);
  SimParams sim = plan.sim;
  sim.record_events = plan.emit_events;

  struct Cell {
    SchemeKind kind;
    double sweep;
  };
  std::vector<Cell> cells;
  for (SchemeKind k : plan.schemes)
    for (double v : is_periodic(k) ? plan.intervals : plan.limits) cells.push_back({k, v});

  const std::size_t reps = plan.repetitions;
  PlanResult out;
  out.runs.resize(cells.size() * reps);
  const std::size_t total = out.runs.size();
  std::atomic<std::size_t> next_rep{0}, done{0};
  std::mutex progress_mu, error_mu;
  std::exception_ptr error;

  auto worker = [&] {
    for (;;) {
      const std::size_t rep = next_rep.fetch_add(1);
      if (rep >= reps) return;
      try {
        const std::uint64_t seed = plan.base_seed + rep;
        const GroundTruthTrace trace = generate_trace(plan.movement, seed);
        if (plan.emit_trace && !plan.output_dir.empty()) {
          char name[48];
          std::snprintf(name, sizeof name, "trace_rep%03zu.csv", rep);
          write_file_atomic(fs::path(plan.output_dir) / "traces" / name,
                            [&](std::ostream& os) { write_trace_csv(os, trace); });
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
          SchemeConfig sc{cells[c].kind, std::nullopt, std::nullopt, plan.cluster_radius};
          (is_periodic(sc.kind) ? sc.interval_s : sc.limit_m) = cells[c].sweep;
          const RunResult r = run_scheme(trace, sc, sim, seed);
          RunSummary s = summarize(r, rep);
          const std::string stem = cell_stem(sc.kind, cells[c].sweep, rep);
          if (!plan.output_dir.empty() && plan.per_run_files)
            write_file_atomic(fs::path(plan.output_dir) / "runs" / (stem + ".csv"),
                              [&](std::ostream& os) { write_run_csv(os, s); });
          if (!plan.output_dir.empty() && plan.emit_events && is_cluster_scheme(sc.kind))
            write_file_atomic(fs::path(plan.output_dir) / "events" / (stem + ".csv"),
                              [&](std::ostream& os) { r.events.write_csv(os); });
          out.runs[c * reps + rep] = std::move(s);
          const std::size_t d = ++done;
          if (opt.progress) {
            std::lock_guard lk(progress_mu);
            opt.progress(d, total);
          }
        }
      } catch (...) {
        std::lock_guard lk(error_mu);
        if (!error) error = std::current_exception();
        next_rep = reps;  // stop handing out work
        return;
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, reps));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<const RunSummary*> rs;
    for (std::size_t r = 0; r < reps; ++r) rs.push_back(&out.runs[c * reps + r]);
    out.rows.push_back(aggregate(cells[c].kind, cells[c].sweep, rs));
  }
  if (!plan.output_dir.empty())
    write_file_atomic(fs::path(plan.output_dir) / "aggregate.csv",
                      [&](std::ostream& os) { write_aggregate_csv(os, out.rows); });
  return out;
}

// ---- figure data --------------------------------------------------------------

enum class Figure { EnergyVsInterval, ErrorVsInterval, ErrorVsEnergyPeriodic, ErrorVsEnergyDynamic };

inline constexpr std::array kAllFigures = {Figure::EnergyVsInterval, Figure::ErrorVsInterval,
                                           Figure::ErrorVsEnergyPeriodic, Figure::ErrorVsEnergyDynamic};

inline const char* figure_name(Figure f) {
  switch (f) {
    case Figure::EnergyVsInterval: return "energy_vs_interval";
    case Figure::ErrorVsInterval: return "error_vs_interval";
    case Figure::ErrorVsEnergyPeriodic: return "error_vs_energy_periodic";
    case Figure::ErrorVsEnergyDynamic: return "error_vs_energy_dynamic";
  }
  return "?";
}

inline bool figure_is_periodic(Figure f) { return f != Figure::ErrorVsEnergyDynamic; }

struct FigurePoint {
  double x_value = 0.0;
  std::string series;
  double y_mean = 0.0;
  double y_std = 0.0;
  double sweep_value = 0.0;
};

/// Points for one figure. Every scheme of the figure's category must cover
/// the same sweep values; a gap is reported as the missing cell.
inline std::vector<FigurePoint> figure_points(const std::vector<AggregateRow>& rows, Figure f) {
  const bool periodic = figure_is_periodic(f);
  std::vector<const AggregateRow*> sel;
  for (const auto& r : rows)
    if (is_periodic(r.kind) == periodic) sel.push_back(&r);
  const char* cat = periodic ? "periodic" : "dynamic";
  if (sel.empty())
    throw std::invalid_argument(std::string(figure_name(f)) + ": no " + cat + " aggregates");

  std::vector<SchemeKind> schemes;
  std::vector<double> sweeps;
  for (const auto* r : sel) {
    if (std::find(schemes.begin(), schemes.end(), r->kind) == schemes.end()) schemes.push_back(r->kind);
    if (std::find(sweeps.begin(), sweeps.end(), r->sweep_value) == sweeps.end()) sweeps.push_back(r->sweep_value);
  }
  std::sort(sweeps.begin(), sweeps.end());
  std::vector<FigurePoint> pts;
  for (SchemeKind k : schemes) {
    for (double v : sweeps) {
      auto it = std::find_if(sel.begin(), sel.end(), [&](const AggregateRow* r) { return r->kind == k && r->sweep_value == v; });
      if (it == sel.end())
        throw std::invalid_argument(std::string(figure_name(f)) + ": missing " + cat + " cell " +
                                    std::string(scheme_name(k)) + " @ " + fmt6(v));
      const AggregateRow& r = **it;
      FigurePoint p{0.0, std::string(scheme_name(k)), 0.0, 0.0, v};
      switch (f) {
        case Figure::EnergyVsInterval:
          p.x_value = v, p.y_mean = r.mean_energy_j, p.y_std = r.std_energy_j;
          break;
        case Figure::ErrorVsInterval:
          p.x_value = v, p.y_mean = r.mean_error_m, p.y_std = r.std_error_m;
          break;
        case Figure::ErrorVsEnergyPeriodic:
        case Figure::ErrorVsEnergyDynamic:
          p.x_value = r.mean_energy_j, p.y_mean = r.mean_error_m, p.y_std = r.std_error_m;
          break;
      }
      pts.push_back(std::move(p));
    }
  }
  return pts;
}

inline void write_figure_csv(std::ostream& os, const std::vector<FigurePoint>& pts) {
  os << "x_value,series,y_mean,y_std,sweep_value\n";
  for (const auto& p : pts)
    os << fmt6(p.x_value) << ',' << p.series << ',' << fmt6(p.y_mean) << ',' << fmt6(p.y_std) << ','
       << fmt6(p.sweep_value) << '\n';
}

inline std::vector<Figure> figures_for(Category c) {
  std::vector<Figure> out;
  for (Figure f : kAllFigures)
    if (c == Category::Both || (c == Category::Periodic) == figure_is_periodic(f)) out.push_back(f);
  return out;
}

/// Writes `<name>.csv` for each requested figure into `dir`; returns the paths.
inline std::vector<std::filesystem::path> emit_figure_data(const std::vector<AggregateRow>& rows,
                                                           const std::filesystem::path& dir,
                                                           const std::vector<Figure>& figures) {
  std::vector<std::pair<Figure, std::vector<FigurePoint>>> data;
  for (Figure f : figures) data.emplace_back(f, figure_points(rows, f));  // validate all before writing
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::vector<std::filesystem::path> paths;
  for (const auto& [f, pts] : data) {
    const auto path = dir / (std::string(figure_name(f)) + ".csv");
    write_file_atomic(path, [&](std::ostream& os) { write_figure_csv(os, pts); });
    paths.push_back(path);
  }
  return paths;
}

}  // namespace ctrack
