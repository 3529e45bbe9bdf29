#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ctrack/harness.hpp"

using namespace ctrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctrack_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentPlan small_plan() {
  ExperimentPlan p;
  p.movement.duration_s = 300.0;
  p.movement.n_nodes = 8;
  p.schemes = {SchemeKind::ClusterStandard};
  p.intervals = {10.0};
  p.repetitions = 2;
  p.base_seed = 40;
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

AggregateRow row(SchemeKind k, double v, double energy, double error) {
  AggregateRow r;
  r.kind = k;
  r.sweep_value = v;
  r.mean_energy_j = energy;
  r.mean_error_m = error;
  return r;
}

}  // namespace

TEST(Config, ParsesKnownKeysAndComments) {
  std::istringstream in(
      "# sweep\n"
      "schemes = individual, ckf_accmag\n"
      "intervals = 10, 20 # two\n"
      "repetitions = 3\n"
      "energy.p_gps = 0.1\n"
      "energy.t_rt = 0.002\n"
      "gps.sigma_pos = 5\n"
      "vm.adopt_broadcasts = false\n"
      "\n");
  const ExperimentPlan p = parse_config(in);
  EXPECT_EQ(p.schemes, (std::vector<SchemeKind>{SchemeKind::IndividualPeriodic, SchemeKind::ClusterCKFAccMag}));
  EXPECT_EQ(p.intervals, (std::vector<double>{10.0, 20.0}));
  EXPECT_EQ(p.repetitions, 3u);
  EXPECT_EQ(p.sim.energy.p_gps, 0.1);
  EXPECT_EQ(p.sim.energy.t_rt_rounded, 0.002);
  EXPECT_EQ(p.sim.gps.sigma_pos, 5.0);
  EXPECT_FALSE(p.sim.vm_adopt_broadcasts);
}

TEST(Config, ErrorsNameTheLineOrKey) {
  std::istringstream unknown("repetitions = 2\nbogus = 1\n");
  EXPECT_EQ(error_of([&] { parse_config(unknown); }), "config line 2: unknown key 'bogus'");
  std::istringstream bad("gps.sigma_pos = ten\n");
  EXPECT_NE(error_of([&] { parse_config(bad); }).find("gps.sigma_pos"), std::string::npos);
  std::istringstream scheme("schemes = individual, teleport\n");
  EXPECT_NE(error_of([&] { parse_config(scheme); }).find("teleport"), std::string::npos);
  std::istringstream noeq("repetitions 2\n");
  EXPECT_NE(error_of([&] { parse_config(noeq); }).find("line 1"), std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/ctrack.cfg"), std::runtime_error);
}

TEST(Config, EveryEnergyParameterIsConfigurable) {
  const auto keys = config_key_names();
  for (const char* k : {"energy.p_gps", "energy.t_gps_lock", "energy.p_mcu", "energy.p_radio", "energy.packet_bits",
                        "energy.channel_bit_rate", "energy.t_rt", "energy.i_nm", "energy.i_sm", "energy.p_nm",
                        "energy.p_sm", "energy.dc_accmag", "energy.p_sb", "energy.e_misc", "energy.track_s",
                        "energy.battery_j"})
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
}

TEST(Plan, ValidationNamesField) {
  ExperimentPlan p = small_plan();
  p.repetitions = 0;
  EXPECT_NE(error_of([&] { p.validate(); }).find("repetitions"), std::string::npos);
  p = small_plan();
  p.intervals = {7.5};
  EXPECT_NE(error_of([&] { p.validate(); }).find("interval_s"), std::string::npos);
  p = small_plan();
  restrict_category(p, Category::Dynamic);
  EXPECT_EQ(error_of([&] { p.validate(); }), "ExperimentPlan.schemes: empty");
  EXPECT_THROW(parse_category("weekly"), std::invalid_argument);
}

TEST(Plan, DefaultsCoverBothSweeps) {
  EXPECT_EQ(default_intervals().size(), 10u);
  EXPECT_EQ(default_intervals().back(), 100.0);
  EXPECT_EQ(default_limits().size(), 9u);
  EXPECT_EQ(default_limits().front(), 50.0);
  EXPECT_EQ(default_schemes(Category::Periodic).size(), 4u);
  EXPECT_EQ(default_schemes(Category::Dynamic).size(), 4u);
}

TEST(MeanStd, SampleStandardDeviation) {
  const auto [m, s] = mean_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  EXPECT_DOUBLE_EQ(m, 5.0);
  EXPECT_NEAR(s, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(mean_std({3.0}).second, 0.0);
}

TEST(RunPlan, OneCellTwoRepsGivesOneRow) {
  const fs::path dir = scratch("onecell");
  ExperimentPlan p = small_plan();
  p.output_dir = dir.string();
  const PlanResult r = run_plan(p);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].runs, 2u);
  EXPECT_EQ(r.runs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "runs" / "cluster_10_rep000.csv"));
  EXPECT_TRUE(fs::exists(dir / "runs" / "cluster_10_rep001.csv"));
  const std::string agg = slurp(dir / "aggregate.csv");
  EXPECT_EQ(agg.rfind("scheme,sweep_value,mean_energy_j,std_energy_j,mean_error_m,std_error_m,mean_fixes,mean_clusters\n", 0),
            0u);
  EXPECT_EQ(std::count(agg.begin(), agg.end(), '\n'), 2);
  fs::remove_all(dir);
}

TEST(RunPlan, RerunsAreByteIdenticalAndIndependentOfJobs) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  ExperimentPlan p = small_plan();
  p.schemes = {SchemeKind::IndividualPeriodic, SchemeKind::ClusterCKFAccMag, SchemeKind::DynamicBaselineVM};
  p.limits = {100.0};
  p.repetitions = 3;
  p.emit_events = true;
  p.output_dir = a.string();
  run_plan(p, {1, {}});
  p.output_dir = b.string();
  run_plan(p, {3, {}});
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 1u + 9u + 3u);  // aggregate, runs, ckf events
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunPlan, AggregateMatchesPerRunFiles) {
  const fs::path dir = scratch("recompute");
  ExperimentPlan p = small_plan();
  p.repetitions = 3;
  p.output_dir = dir.string();
  const PlanResult r = run_plan(p);
  std::vector<double> energy, error;
  for (std::size_t rep = 0; rep < 3; ++rep) {
    std::ifstream in(dir / "runs" / (cell_stem(SchemeKind::ClusterStandard, 10.0, rep) + ".csv"));
    std::string line;
    std::getline(in, line);
    double e_sum = 0.0, err_sum = 0.0;
    int n = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> v;
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
      ASSERT_EQ(v.size(), 9u);
      err_sum += v[1];
      e_sum += v[2] + v[3] + v[4] + v[5] + v[6];
      ++n;
    }
    ASSERT_EQ(n, 8);
    energy.push_back(e_sum / n);
    error.push_back(err_sum / n);
  }
  const auto [em, es] = mean_std(energy);
  const auto [rm, rs] = mean_std(error);
  EXPECT_NEAR(r.rows[0].mean_energy_j, em, 1e-5 * em);
  EXPECT_NEAR(r.rows[0].std_energy_j, es, 1e-3 * em);
  EXPECT_NEAR(r.rows[0].mean_error_m, rm, 1e-5 * rm);
  EXPECT_NEAR(r.rows[0].std_error_m, rs, 1e-3 * rm);
  fs::remove_all(dir);
}

TEST(RunPlan, UnwritableOutputNamesThePath) {
  ExperimentPlan p = small_plan();
  p.output_dir = "/proc/ctrack_cannot_write_here";
  EXPECT_EQ(error_of([&] { run_plan(p); }), "output directory not writable: /proc/ctrack_cannot_write_here");
}

TEST(RunPlan, InMemoryWhenNoOutputDir) {
  ExperimentPlan p = small_plan();
  p.repetitions = 1;
  std::size_t calls = 0;
  const PlanResult r = run_plan(p, {1, [&](std::size_t, std::size_t) { ++calls; }});
  EXPECT_EQ(calls, 1u);
  EXPECT_TRUE(r.runs[0].conserved);
}

TEST(Figures, MissingCategoryIsReported) {
  const std::vector<AggregateRow> rows{row(SchemeKind::IndividualPeriodic, 10.0, 100.0, 20.0)};
  EXPECT_EQ(error_of([&] { figure_points(rows, Figure::ErrorVsEnergyDynamic); }),
            "error_vs_energy_dynamic: no dynamic aggregates");
  EXPECT_THROW(emit_figure_data(rows, scratch("nofig"), figures_for(Category::Both)), std::invalid_argument);
  EXPECT_FALSE(fs::exists(scratch("nofig") / "energy_vs_interval.csv"));
}

TEST(Figures, MissingCellIsNamed) {
  const std::vector<AggregateRow> rows{row(SchemeKind::IndividualPeriodic, 10.0, 1.0, 1.0),
                                       row(SchemeKind::IndividualPeriodic, 20.0, 1.0, 1.0),
                                       row(SchemeKind::ClusterStandard, 10.0, 1.0, 1.0)};
  EXPECT_EQ(error_of([&] { figure_points(rows, Figure::EnergyVsInterval); }),
            "energy_vs_interval: missing periodic cell cluster @ 20");
}

TEST(Figures, PeriodicSweepShapesAndPairing) {
  std::vector<AggregateRow> rows;
  for (SchemeKind k : default_schemes(Category::Periodic))
    for (double v : default_intervals()) rows.push_back(row(k, v, 1000.0 / v, v / 2.0));
  for (SchemeKind k : default_schemes(Category::Dynamic))
    for (double v : default_limits()) rows.push_back(row(k, v, 5000.0 / v, v / 3.0));
  const auto energy = figure_points(rows, Figure::EnergyVsInterval);
  ASSERT_EQ(energy.size(), 40u);
  EXPECT_EQ(energy[0].x_value, 10.0);
  EXPECT_EQ(energy[0].y_mean, 100.0);
  const auto pairs = figure_points(rows, Figure::ErrorVsEnergyPeriodic);
  ASSERT_EQ(pairs.size(), 40u);
  for (const auto& pt : pairs) {
    EXPECT_DOUBLE_EQ(pt.x_value, 1000.0 / pt.sweep_value);
    EXPECT_DOUBLE_EQ(pt.y_mean, pt.sweep_value / 2.0);
  }
  EXPECT_EQ(figure_points(rows, Figure::ErrorVsEnergyDynamic).size(), 36u);

  const fs::path dir = scratch("figs");
  const auto paths = emit_figure_data(rows, dir, figures_for(Category::Both));
  ASSERT_EQ(paths.size(), 4u);
  const std::string text = slurp(dir / "error_vs_interval.csv");
  EXPECT_EQ(text.rfind("x_value,series,y_mean,y_std,sweep_value\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 41);
  EXPECT_NE(text.find("\n10,individual,5,0,10\n"), std::string::npos);
  fs::remove_all(dir);
}

TEST(RunCsv, SchemaAndPrecision) {
  RunSummary s;
  s.nodes.push_back({12.3456789, {0.436, 1e-6, 2e-6, 0.0, 54.0}, 1, 43200.0});
  std::ostringstream os;
  write_run_csv(os, s);
  EXPECT_EQ(os.str(),
            "node_id,mean_error_m,energy_gps_j,energy_tx_j,energy_rx_j,energy_accmag_j,energy_misc_j,fixes,alive_s\n"
            "0,12.3457,0.436,1e-06,2e-06,0,54,1,43200\n");
}
