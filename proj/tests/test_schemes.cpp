#include <gtest/gtest.h>

#include <cmath>

#include "ctrack/schemes.hpp"
#include "oracles.hpp"

using namespace ctrack;

namespace {

constexpr double kFix = 0.436;
const double kMsg = radio_msg_cost(EnergyParams{});

double gps_j(const NodeResult& n) { return n.energy_j[static_cast<std::size_t>(EnergyCategory::Gps)]; }
double accmag_j(const NodeResult& n) { return n.energy_j[static_cast<std::size_t>(EnergyCategory::AccMag)]; }

SimParams noiseless() {
  SimParams p;
  p.gps = {0.0, 0.0};
  p.imu.noise_density_ug = 0.0;
  return p;
}

std::vector<Vec3> row(std::size_t n, double spacing, double y = 0.0) {
  std::vector<Vec3> v;
  for (std::size_t i = 0; i < n; ++i) v.emplace_back(1000.0 + spacing * static_cast<double>(i), 1000.0 + y, 100.0);
  return v;
}

GroundTruthTrace still(std::size_t n, double spacing, std::size_t samples) {
  return oracle::static_with_velocity(row(n, spacing), std::vector<Vec3>(n, Vec3::Zero()), samples);
}

const GroundTruthTrace& flock_hour() {
  static const GroundTruthTrace tr = [] {
    FlockConfig c;
    c.duration_s = 3600.0;
    return generate_trace(c, 0);
  }();
  return tr;
}

}  // namespace

TEST(IndividualPeriodic, FullTrackAtTenSeconds) {
  const GroundTruthTrace tr = still(20, 500.0, 43200);
  const RunResult r = run_individual_periodic(tr, 10.0, SimParams{}, 1);
  for (const auto& n : r.nodes) {
    EXPECT_EQ(n.fixes, 4320u);
    EXPECT_NEAR(gps_j(n), 1883.52, 1e-6);
    EXPECT_NEAR(n.total_energy_j, 1937.52, 1e-6);
  }
  EXPECT_NEAR(r.mean_energy_j, 1937.52, 1e-6);
  EXPECT_EQ(r.tx_messages, 0u);
  EXPECT_TRUE(r.conserved);
}

TEST(IndividualPeriodic, FullTrackAtHundredSeconds) {
  const GroundTruthTrace tr = still(20, 500.0, 43200);
  const RunResult r = run_individual_periodic(tr, 100.0, SimParams{}, 1);
  for (const auto& n : r.nodes) {
    EXPECT_EQ(n.fixes, 432u);
    EXPECT_NEAR(gps_j(n), 188.352, 1e-6);
  }
}

TEST(IndividualPeriodic, NoiselessLinearMotionIsExact) {
  // Fixes at both ends of the track, so interpolation covers every second.
  const GroundTruthTrace tr = oracle::straight_line(row(3, 300.0), Vec3(4, -3, 0.5), 101);
  const RunResult r = run_individual_periodic(tr, 10.0, noiseless(), 2);
  EXPECT_LT(r.mean_error_m, 1e-9);
}

TEST(IndividualPeriodic, RejectsBadInterval) {
  const GroundTruthTrace tr = still(2, 500.0, 50);
  EXPECT_THROW(run_individual_periodic(tr, 0.0, SimParams{}, 0), std::invalid_argument);
  EXPECT_THROW(run_individual_periodic(tr, 2.5, SimParams{}, 0), std::invalid_argument);
  EXPECT_THROW(run_individual_periodic(tr, 100.0, SimParams{}, 0), std::invalid_argument);
}

TEST(ClusterStandard, SingletonCostsOnlyItsFormationMessages) {
  const GroundTruthTrace tr = oracle::straight_line(row(1, 0.0), Vec3(5, 0, 0), 600);
  const RunResult ind = run_individual_periodic(tr, 10.0, SimParams{}, 3);
  const RunResult cl = run_cluster_standard(tr, 10.0, SimParams{}, 3);
  EXPECT_EQ(cl.nodes[0].fixes, ind.nodes[0].fixes);
  EXPECT_EQ(cl.rx_messages, 0u);
  EXPECT_NEAR(cl.mean_energy_j - ind.mean_energy_j, static_cast<double>(cl.tx_messages) * kMsg, 1e-9);
  EXPECT_NEAR(cl.mean_error_m, ind.mean_error_m, 1e-9);
}

TEST(ClusterStandard, TwentyCoLocatedNodesShareTheFixes) {
  const GroundTruthTrace tr = still(20, 0.0, 43200);
  const RunResult r = run_cluster_standard(tr, 10.0, SimParams{}, 4);
  // one lock each at t=0, then 4319 cluster fixes shared by 20 nodes
  double gps = 0.0;
  for (const auto& n : r.nodes) gps += gps_j(n);
  EXPECT_NEAR(gps / 20.0, (20 + 4319) * kFix / 20.0, 1e-6);
  EXPECT_NEAR(gps / 20.0, 94.59, 0.01);
  EXPECT_EQ(r.total_fixes, 20u + 4319u);
  EXPECT_NEAR(r.mean_clusters, 1.0, 1e-12);
  EXPECT_TRUE(r.conserved);
}

TEST(ClusterStandard, AdoptedPositionErrorBoundedBySpread) {
  const GroundTruthTrace tr = still(3, 10.0, 300);
  const RunResult r = run_cluster_standard(tr, 10.0, noiseless(), 5);
  ASSERT_NEAR(r.mean_clusters, 1.0, 1e-12);
  for (const auto& n : r.nodes) EXPECT_LE(n.mean_error_m, 20.0 + 1e-9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < tr.samples(); ++t) ASSERT_LE((r.nodes[i].track[t] - tr.position(i, t)).norm(), 20.0 + 1e-9);
}

TEST(ClusterCkf, InertialOverheadPerNode) {
  const GroundTruthTrace tr = still(3, 10.0, 43200);
  const RunResult r = run_cluster_ckf(tr, 100.0, SimParams{}, 6, true);
  for (const auto& n : r.nodes) EXPECT_NEAR(accmag_j(n), 3.051, 1e-9);
  const RunResult plain = run_cluster_ckf(tr, 100.0, SimParams{}, 6, false);
  for (const auto& n : plain.nodes) EXPECT_EQ(accmag_j(n), 0.0);
}

TEST(ClusterCkf, NoiselessSingleNodeTracksExactly) {
  const GroundTruthTrace tr = oracle::straight_line(row(1, 0.0), Vec3(6, 1, 0), 200);
  for (bool imu : {false, true}) {
    const RunResult r = run_cluster_ckf(tr, 10.0, noiseless(), 7, imu);
    EXPECT_LT(r.mean_error_m, 1e-6) << "imu=" << imu;
  }
}

TEST(ClusterCkf, MembersSendFixRequests) {
  const GroundTruthTrace tr = still(4, 5.0, 101);
  const RunResult hold = run_cluster_standard(tr, 10.0, SimParams{}, 8);
  const RunResult ckf = run_cluster_ckf(tr, 10.0, SimParams{}, 8, false);
  // ten triggers, three members asking each time
  EXPECT_EQ(ckf.tx_messages - hold.tx_messages, 30u);
}

TEST(Uncertainty, GrowsLinearlyAndResets) {
  UncertaintyTracker u = reset_uncertainty(0.0, 10.0, 6.0);
  EXPECT_EQ(u.u_now, 10.0);
  for (int k = 0; k < 7; ++k) u = step_uncertainty(u, 1.0, 6.0);
  EXPECT_NEAR(u.u_now, 52.0, 1e-12);
  EXPECT_THROW(step_uncertainty(u, 0.0, 6.0), std::invalid_argument);
  u = reset_uncertainty(7.0, 60.0, 6.0);
  EXPECT_EQ(u.u_now, 60.0);
}

TEST(Uncertainty, MeanTrigger) {
  const std::vector<double> u{40.0, 60.0};
  EXPECT_TRUE(mean_uncertainty_reached(u, 50.0));
  EXPECT_FALSE(mean_uncertainty_reached(u, 50.5));
  EXPECT_FALSE(mean_uncertainty_reached({}, 0.0));
}

TEST(DynamicIndividual, FixesEverySevenSeconds) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  const GroundTruthTrace tr = oracle::straight_line(row(1, 0.0), Vec3(6, 0, 0), 71);
  const RunResult r = run_dynamic_individual(tr, 50.0, p, 9);
  EXPECT_EQ(r.nodes[0].fixes, 11u);  // t = 0, 7, ..., 70
}

TEST(DynamicIndividual, StationaryNodeNeverTriggers) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  const RunResult r = run_dynamic_individual(still(2, 500.0, 500), 50.0, p, 9);
  for (const auto& n : r.nodes) EXPECT_EQ(n.fixes, 1u);
}

TEST(DynamicCluster, SingletonMatchesIndividualTiming) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  const GroundTruthTrace tr = oracle::straight_line(row(1, 0.0), Vec3(6, 0, 0), 71);
  const RunResult r = run_dynamic_cluster(tr, 50.0, p, 9, DynamicVariant::Standard);
  EXPECT_EQ(r.nodes[0].fixes, 11u);
}

TEST(DynamicCluster, FewerFixesAsLimitGrows) {
  const auto& tr = flock_hour();
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double limit : {50.0, 150.0, 300.0, 450.0}) {
    const RunResult r = run_dynamic_cluster(tr, limit, SimParams{}, 10, DynamicVariant::Standard);
    EXPECT_LE(r.total_fixes, prev) << "limit " << limit;
    prev = r.total_fixes;
  }
}

TEST(BaselineVm, IsolatedNodeBehavesLikeDynamicIndividual) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  const GroundTruthTrace tr = oracle::straight_line(row(1, 0.0), Vec3(6, 0, 0), 300);
  const RunResult vm = run_baseline_vm(tr, 100.0, p, 11);
  const RunResult di = run_dynamic_individual(tr, 90.0, p, 11);
  EXPECT_EQ(vm.nodes[0].fixes, di.nodes[0].fixes);
  EXPECT_NEAR(gps_j(vm.nodes[0]), gps_j(di.nodes[0]), 1e-12);
  EXPECT_NEAR(vm.mean_error_m, di.mean_error_m, 1e-12);
  // a request and a broadcast per trigger, nobody hears them
  EXPECT_EQ(vm.tx_messages, 2 * (vm.nodes[0].fixes - 1));
  EXPECT_EQ(vm.rx_messages, 0u);
}

TEST(BaselineVm, FruitfulNeighbourSparesTheFix) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  p.record_events = true;
  const GroundTruthTrace tr =
      oracle::static_with_velocity(row(2, 10.0), {Vec3(6, 0, 0), Vec3::Zero()}, 200);
  const RunResult r = run_baseline_vm(tr, 100.0, p, 12);
  EXPECT_EQ(r.nodes[0].fixes, 1u);
  EXPECT_EQ(r.nodes[1].fixes, 1u);
  bool adopted = false;
  for (const auto& e : r.events.events()) adopted |= e.kind == "vm_adopt" && e.node == 0 && e.cluster_head == 1;
  EXPECT_TRUE(adopted);
}

TEST(BaselineVm, BroadcastAdoptionSavesRequests) {
  SimParams p;
  p.gps.sigma_vel = 0.0;
  // Both reach the trigger together at t = 14, the only trigger in the track.
  const GroundTruthTrace tr = oracle::static_with_velocity(row(2, 10.0), {Vec3(6, 0, 0), Vec3(6, 0, 0)}, 16);
  const RunResult on = run_baseline_vm(tr, 100.0, p, 13);
  p.vm_adopt_broadcasts = false;
  const RunResult off = run_baseline_vm(tr, 100.0, p, 13);
  for (const RunResult* r : {&on, &off}) {
    EXPECT_EQ(r->nodes[0].fixes, 2u);
    EXPECT_EQ(r->nodes[1].fixes, 1u);
  }
  // node 0 asks and broadcasts; without adoption node 1 asks too and node 0 answers
  EXPECT_EQ(on.tx_messages, 2u);
  EXPECT_EQ(off.tx_messages, 4u);
}

TEST(ScoreRun, HeldFixUnderConstantVelocity) {
  const GroundTruthTrace tr = oracle::straight_line({Vec3::Zero()}, Vec3(6, 0, 0), 10);
  const std::vector<std::vector<Vec3>> tracks{std::vector<Vec3>(10, Vec3::Zero())};
  const ErrorMetrics m = score_run(tracks, tr);
  EXPECT_NEAR(m.mean, 27.0, 1e-12);
  EXPECT_NEAR(m.per_node_mean[0], 27.0, 1e-12);
  // errors 0, 6, ..., 54: population sd = 6 * sqrt(8.25)
  EXPECT_NEAR(m.std, 6.0 * std::sqrt(8.25), 1e-9);
}

TEST(ScoreRun, MismatchRejected) {
  const GroundTruthTrace tr = still(2, 10.0, 5);
  EXPECT_THROW(score_run(std::vector<std::vector<Vec3>>(1, std::vector<Vec3>(5)), tr), std::invalid_argument);
  EXPECT_THROW(score_run(std::vector<std::vector<Vec3>>(2, std::vector<Vec3>(4)), tr), std::invalid_argument);
}

TEST(RunScheme, DeterministicPerSeedAndConserving) {
  const auto& tr = flock_hour();
  const std::vector<SchemeConfig> configs{
      {SchemeKind::IndividualPeriodic, 30.0, std::nullopt},   {SchemeKind::ClusterStandard, 30.0, std::nullopt},
      {SchemeKind::ClusterCKF, 30.0, std::nullopt},           {SchemeKind::ClusterCKFAccMag, 30.0, std::nullopt},
      {SchemeKind::DynamicCluster, std::nullopt, 150.0},      {SchemeKind::DynamicCKF, std::nullopt, 150.0},
      {SchemeKind::DynamicCKFAccMag, std::nullopt, 150.0},    {SchemeKind::DynamicBaselineVM, std::nullopt, 150.0},
      {SchemeKind::DynamicIndividual, std::nullopt, 150.0}};
  for (const auto& sc : configs) {
    const RunResult a = run_scheme(tr, sc, SimParams{}, 21);
    const RunResult b = run_scheme(tr, sc, SimParams{}, 21);
    const RunResult c = run_scheme(tr, sc, SimParams{}, 22);
    const std::string name(scheme_name(sc.kind));
    EXPECT_TRUE(a.conserved) << name;
    EXPECT_EQ(a.mean_error_m, b.mean_error_m) << name;
    EXPECT_EQ(a.total_energy_j, b.total_energy_j) << name;
    EXPECT_EQ(a.nodes[7].track, b.nodes[7].track) << name;
    EXPECT_NE(a.mean_error_m, c.mean_error_m) << name;
    EXPECT_TRUE(std::isfinite(a.mean_error_m)) << name;
  }
}

TEST(RunScheme, IncompleteConfigRejected) {
  const GroundTruthTrace tr = still(2, 10.0, 50);
  EXPECT_THROW(run_scheme(tr, {SchemeKind::DynamicBaselineVM, 10.0, std::nullopt}, SimParams{}, 0),
               std::invalid_argument);
  EXPECT_THROW(run_scheme(tr, {SchemeKind::ClusterStandard, std::nullopt, 100.0}, SimParams{}, 0),
               std::invalid_argument);
}

TEST(RunScheme, TinyBatteryEndsTheRun) {
  SimParams p;
  p.energy.battery_j = 1.0;
  const GroundTruthTrace tr = still(3, 500.0, 200);
  const RunResult r = run_individual_periodic(tr, 10.0, p, 23);
  // third fix at t = 20 does not fit into what is left after two
  EXPECT_EQ(r.end_time_s, 20.0);
  for (const auto& n : r.nodes) {
    ASSERT_TRUE(n.death_time.has_value());
    EXPECT_EQ(*n.death_time, 20.0);
    EXPECT_NEAR(n.total_energy_j, 1.0, 1e-12);
    EXPECT_EQ(n.track.size(), tr.samples());
    EXPECT_TRUE(n.conserved);
  }
  const RunResult c = run_cluster_ckf(tr, 10.0, p, 23, true);
  EXPECT_TRUE(c.conserved);
  EXPECT_LT(c.end_time_s, 199.0);
}

TEST(RunScheme, ClusteringSavesEnergyOnAFlock) {
  const auto& tr = flock_hour();
  const RunResult ind = run_individual_periodic(tr, 10.0, SimParams{}, 30);
  const RunResult cl = run_cluster_standard(tr, 10.0, SimParams{}, 30);
  EXPECT_LT(cl.mean_energy_j, ind.mean_energy_j);
  EXPECT_GT(cl.mean_error_m, ind.mean_error_m);
  EXPECT_LT(cl.total_fixes, ind.total_fixes);
}
