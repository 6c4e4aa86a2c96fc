#include "fetpf/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fetpf {
namespace {

ExperimentConfig small_config(FilterVariant v, std::size_t n = 10) {
  ExperimentConfig c;
  c.experiment_id = "unit/" + std::string(to_string(v));
  c.variant = v;
  c.N = n;
  c.M = 30;
  c.total_steps = 120;
  c.spinup_steps = 20;
  c.replicates = 2;
  c.target_files = {"builtin:climatology"};
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fetpf_harness_" + name);
}

TEST(Seeds, DistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::size_t g = 0; g < 20; ++g)
    for (std::size_t r = 0; r < 20; ++r) seen.insert(filter_seed(1, g, r));
  EXPECT_EQ(seen.size(), 400U);
  EXPECT_EQ(filter_seed(7, 3, 2), filter_seed(7, 3, 2));
  EXPECT_NE(truth_seed(7, 0), truth_seed(7, 1));
  EXPECT_NE(truth_seed(7, 0), truth_seed(8, 0));
}

TEST(Twin, TruthIsSharedAcrossGridPositions) {
  ExperimentConfig a = small_config(FilterVariant::ETPF), b = small_config(FilterVariant::FETPF);
  b.grid_index = 5;
  const TwinData ta = generate_twin(a, 1), tb = generate_twin(b, 1);
  ASSERT_EQ(ta.truth.size(), tb.truth.size());
  EXPECT_EQ(ta.observations, tb.observations);
  EXPECT_NE(generate_twin(a, 0).observations, ta.observations);
}

TEST(Twin, ObservationNoiseHasConfiguredVariance) {
  ExperimentConfig c = small_config(FilterVariant::ETPF);
  c.total_steps = 20000;
  c.spinup_steps = 0;
  const TwinData t = generate_twin(c, 0);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < c.total_steps; ++k) {
    const double e = t.observations[k] - t.truth[k + 1](0);
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(c.total_steps);
  EXPECT_NEAR(sum_sq / n - (sum / n) * (sum / n), 8.0, 0.05 * 8.0);
}

TEST(RunReplicate, DeterministicRows) {
  for (const auto v : {FilterVariant::ETPF, FilterVariant::ETPF2, FilterVariant::FETPF}) {
    const ExperimentConfig c = small_config(v);
    const RunResult a = run_replicate(c, 0), b = run_replicate(c, 0);
    EXPECT_EQ(a, b) << to_string(v);
    EXPECT_TRUE(std::isfinite(a.rmse));
    EXPECT_NE(run_replicate(c, 1).rmse, a.rmse);
  }
}

TEST(RunReplicate, CsvFieldsFollowVariant) {
  const RunResult e = run_replicate(small_config(FilterVariant::ETPF), 0);
  EXPECT_EQ(e.variant, "etpf");
  EXPECT_EQ(e.M, 0U);
  EXPECT_EQ(e.family, "none");
  EXPECT_DOUBLE_EQ(e.tau, 0.04);
  const RunResult f = run_replicate(small_config(FilterVariant::FETPF), 0);
  EXPECT_EQ(f.variant, "fetpf");
  EXPECT_EQ(f.M, 30U);
  EXPECT_EQ(f.family, "gaussian");
  EXPECT_EQ(f.tau, 0.0);
}

TEST(RunReplicate, DiagnosticsHoldTransportInvariants) {
  for (const auto v : {FilterVariant::ETPF, FilterVariant::ETPF2, FilterVariant::FETPF}) {
    const ReplicateOutcome o = run_replicate_detailed(small_config(v), 0);
    EXPECT_EQ(o.diagnostics.steps_completed, 120U);
    EXPECT_LT(o.diagnostics.max_mean_defect, 1e-8) << to_string(v);
    if (v == FilterVariant::ETPF2) { EXPECT_LT(o.diagnostics.max_covariance_defect, 1e-6); }
    if (v == FilterVariant::FETPF) { EXPECT_GT(o.diagnostics.mean_gamma, 0.0); }
  }
}

TEST(RunReplicate, LargeEnsembleTracksTruth) {
  ExperimentConfig c = small_config(FilterVariant::ETPF, 100);
  c.total_steps = 1000;
  c.spinup_steps = 300;
  EXPECT_LT(run_replicate(c, 0).rmse, std::sqrt(8.0));
}

TEST(RunReplicate, DivergenceIsReportedAsInfinity) {
  ExperimentConfig c = small_config(FilterVariant::ETPF);
  c.initial_spread = 1e300;
  const ReplicateOutcome o = run_replicate_detailed(c, 0);
  EXPECT_TRUE(o.result.diverged());
  EXPECT_TRUE(std::isinf(o.result.rmse));
  EXPECT_FALSE(o.diagnostics.message.empty());
}

TEST(Csv, HeaderAndOneRowPerReplicate) {
  std::ostringstream os;
  write_csv(os, run_experiment({small_config(FilterVariant::ETPF)}, {1}));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kCsvHeader);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(Csv, RoundTripIsExact) {
  std::vector<RunResult> rows = run_experiment({small_config(FilterVariant::FETPF)}, {1});
  rows.push_back(rows.front());
  rows.back().rmse = std::numeric_limits<double>::infinity();
  std::stringstream ss;
  write_csv(ss, rows);
  EXPECT_EQ(read_csv(ss), rows);
}

TEST(Csv, MalformedInputThrows) {
  std::istringstream bad_header("a,b,c\n");
  EXPECT_THROW(read_csv(bad_header), IoError);
  std::istringstream short_row(std::string(kCsvHeader) + "\nx,etpf,5\n");
  EXPECT_THROW(read_csv(short_row), IoError);
  std::istringstream bad_number(std::string(kCsvHeader) + "\nx,etpf,five,0,0,0.04,none,0,1,2.5,0\n");
  EXPECT_THROW(read_csv(bad_number), IoError);
}

TEST(Aggregate, MatchesHandAverageAndCountsDivergence) {
  std::vector<RunResult> rows(4);
  rows[0] = {"a", "etpf", 5, 0, 0.0, 0.04, "none", 0, 1, 2.0, 0};
  rows[1] = {"b", "fetpf", 5, 10, 1.2, 0.0, "gaussian", 0, 2, 3.0, 1};
  rows[2] = {"a", "etpf", 5, 0, 0.0, 0.04, "none", 1, 3, 4.0, 0};
  rows[3] = {"a", "etpf", 5, 0, 0.0, 0.04, "none", 2, 4, std::numeric_limits<double>::infinity(), 0};
  const auto pts = aggregate(rows);
  ASSERT_EQ(pts.size(), 2U);
  EXPECT_EQ(pts[0].experiment_id, "a");
  EXPECT_DOUBLE_EQ(pts[0].mean_rmse, 3.0);
  EXPECT_EQ(pts[0].completed, 2U);
  EXPECT_EQ(pts[0].diverged, 1U);
  EXPECT_DOUBLE_EQ(pts[1].mean_rmse, 3.0);
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
  std::vector<ExperimentConfig> grid{small_config(FilterVariant::ETPF), small_config(FilterVariant::FETPF)};
  EXPECT_EQ(run_experiment(grid, {1}), run_experiment(grid, {3}));
}

TEST(RunExperiment, GridPositionFeedsSeed) {
  std::vector<ExperimentConfig> grid{small_config(FilterVariant::ETPF), small_config(FilterVariant::ETPF)};
  const auto rows = run_experiment(grid, {1});
  EXPECT_EQ(rows[0].seed, filter_seed(grid[0].master_seed, 0, 0));
  EXPECT_EQ(rows[2].seed, filter_seed(grid[0].master_seed, 1, 0));
  EXPECT_NE(rows[0].rmse, rows[2].rmse);
}

TEST(RunExperiment, EmptyGridOrMissingTargetThrows) {
  EXPECT_THROW(run_experiment({}), ConfigError);
  ExperimentConfig c = small_config(FilterVariant::FETPF);
  c.target_files = {"/nonexistent/fetpf/target.txt"};
  EXPECT_THROW(run_experiment({c}), IoError);
}

TEST(Presets, PaperScaleSetup) {
  const auto grid = preset("fig1", Scale::Paper);
  ASSERT_FALSE(grid.empty());
  std::set<std::size_t> sizes;
  for (const auto& c : grid) {
    EXPECT_EQ(c.total_steps, 10000U);
    EXPECT_EQ(c.spinup_steps, 1000U);
    EXPECT_EQ(c.replicates, 20U);
    EXPECT_DOUBLE_EQ(c.dt_obs, 0.12);
    EXPECT_DOUBLE_EQ(c.observation.noise_variance, 8.0);
    EXPECT_EQ(c.observation.observed_index, 0U);
    if (c.variant != FilterVariant::FETPF) { EXPECT_DOUBLE_EQ(c.tau, 0.04); }
    if (c.variant == FilterVariant::FETPF) { EXPECT_EQ(c.M, 100U); }
    sizes.insert(c.N);
  }
  EXPECT_EQ(sizes, (std::set<std::size_t>{5, 10, 20, 30, 50, 100}));
}

TEST(Presets, Fig2UsesBothClusters) {
  for (const auto& c : preset("fig2", Scale::Desk)) {
    if (c.variant == FilterVariant::FETPF) {
      EXPECT_EQ(c.target_files, (std::vector<std::string>{"builtin:cluster1", "builtin:cluster2"}));
    }
  }
}

TEST(Presets, Fig3SweepsMAndAlphaAtFiveMembers) {
  const auto grid = preset("fig3", Scale::Desk);
  EXPECT_EQ(grid.size(), 25U);
  std::set<std::string> ids;
  for (const auto& c : grid) {
    EXPECT_EQ(c.N, 5U);
    EXPECT_EQ(c.variant, FilterVariant::FETPF);
    EXPECT_EQ(c.total_steps, 2000U);
    ids.insert(c.experiment_id);
  }
  EXPECT_EQ(ids.size(), 25U);
  EXPECT_TRUE(ids.count("fig3/fetpf-gaussian-a1.2-M100/N5"));
}

TEST(Presets, UnknownNamesThrow) {
  EXPECT_THROW(preset("fig4", Scale::Desk), ConfigError);
  EXPECT_THROW(parse_scale("huge"), ConfigError);
  EXPECT_THROW(parse_variant("enkf"), ConfigError);
  EXPECT_THROW(parse_family("cauchy"), ConfigError);
}

TEST(ResolveTarget, BuiltinsAndFiles) {
  EXPECT_NEAR(resolve_target("builtin:climatology").covariance.trace(), 3.0, 1e-12);
  EXPECT_EQ(resolve_target("builtin:cluster2").label, "cluster2");
  EXPECT_THROW(resolve_target("builtin:nothing"), ConfigError);
  const auto path = temp_path("target.txt");
  save_matrix(path, 2.0 * reference::cluster1());
  EXPECT_LT((resolve_target(path.string()).covariance - trace_normalize(reference::cluster1())).norm(), 1e-12);
  std::filesystem::remove(path);
}

TEST(JsonConfig, RoundTrip) {
  ExperimentConfig c = small_config(FilterVariant::FETPF);
  c.family = AnomalyFamily::Laplace;
  c.inflation_alpha = 1.5;
  c.observation.noise_variance = 4.0;
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(JsonConfig, RejectsBadInput) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"variant", "etpf"}, {"bogus", 1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"N", "twenty"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"spinup_steps", 5000}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"variant", "fetpf"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"variant", "etpf2"}, {"N", 3}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(JsonConfig, FileWithArrayAndRelativeTargets) {
  const auto dir = temp_path("cfgdir");
  std::filesystem::create_directories(dir);
  save_matrix(dir / "p.txt", reference::climatology());
  {
    std::ofstream out(dir / "grid.json");
    out << R"([{"experiment_id": "a", "variant": "etpf"},
               {"experiment_id": "b", "variant": "fetpf", "target_files": ["p.txt"]}])";
  }
  const auto grid = load_config_file(dir / "grid.json");
  ASSERT_EQ(grid.size(), 2U);
  EXPECT_EQ(std::filesystem::path(grid[1].target_files[0]), dir / "p.txt");
  {
    std::ofstream out(dir / "broken.json");
    out << "{ not json";
  }
  EXPECT_THROW(load_config_file(dir / "broken.json"), ConfigError);
  EXPECT_THROW(load_config_file(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ShippedData, TargetFilesMatchBuiltins) {
  const std::filesystem::path dir = std::filesystem::path(FETPF_SOURCE_DIR) / "data" / "targets";
  EXPECT_EQ(load_matrix(dir / "climatology.txt"), reference::climatology());
  EXPECT_EQ(load_matrix(dir / "cluster1.txt"), reference::cluster1());
  EXPECT_EQ(load_matrix(dir / "cluster2.txt"), reference::cluster2());
}

TEST(ShippedData, ExampleConfigLoads) {
  const auto grid = load_config_file(std::filesystem::path(FETPF_SOURCE_DIR) / "data" / "configs" / "fetpf_n10.json");
  ASSERT_EQ(grid.size(), 2U);
  const FilterConfig f = filter_config(grid[1]);
  ASSERT_EQ(f.targets.size(), 2U);
  EXPECT_EQ(f.targets[0].label, "cluster1");
}

TEST(ForecastCovariances, TraceNormalizedSamples) {
  const auto samples = forecast_covariance_samples(50, 20, 0.04, 20, 3);
  ASSERT_EQ(samples.size(), 50U);
  for (const auto& s : samples) EXPECT_NEAR(s.matrix.trace(), 3.0, 1e-12);
  EXPECT_EQ(samples.front().time_index, 20U);
}

}  // namespace
}  // namespace fetpf
