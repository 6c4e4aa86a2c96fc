#pragma once

/**
 * @file harness.hpp
 * @brief Lorenz '63 twin-experiment driver.
 *
 * A replicate draws a truth trajectory and scalar observations from a stream
 * keyed by (master_seed, replicate), so every configuration in a grid sees
 * the same truth. The filter's own stream is keyed by
 * (master_seed, grid_index, replicate).
 */

#include "fetpf/climatology.hpp"
#include "fetpf/dynamics.hpp"
#include "fetpf/ensembles.hpp"
#include "fetpf/filters.hpp"
#include "fetpf/matrix_io.hpp"
#include "fetpf/shrinkage.hpp"
#include "fetpf/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace fetpf {

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  FilterVariant variant = FilterVariant::ETPF;
  double tau = 0.04;
  std::size_t M = 100;
  AnomalyFamily family = AnomalyFamily::Gaussian;
  double inflation_alpha = 1.0;
  ObservationModel observation;
  std::size_t N = 20;
  double dt_obs = 0.12;
  std::size_t total_steps = 2000;
  std::size_t spinup_steps = 200;
  std::size_t replicates = 5;
  std::uint64_t master_seed = 20210601;
  /// Paths, or builtin:climatology / builtin:cluster1 / builtin:cluster2.
  std::vector<std::string> target_files;
  std::string output_path;
  /// Standard deviation of the initial ensemble around the initial truth.
  double initial_spread = 2.0;
  /// Position in the experiment grid; feeds the filter seed.
  std::size_t grid_index = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (experiment_id.empty() || experiment_id.find_first_of(",\n\"") != std::string::npos)
      fail("experiment_id must be nonempty and free of commas, quotes and newlines");
    if (!(dt_obs > 0.0)) fail("dt_obs must be positive");
    if (spinup_steps >= total_steps) fail("spinup_steps must be smaller than total_steps");
    if (replicates < 1) fail("replicates must be at least 1");
    if (N < 1) fail("N must be at least 1");
    if (!(tau >= 0.0)) fail("tau must be nonnegative");
    if (!(initial_spread >= 0.0)) fail("initial_spread must be nonnegative");
    if (observation.observed_index >= 3 || !(observation.noise_variance > 0.0))
      fail("observation model invalid for the 3-component Lorenz system");
    if (variant == FilterVariant::ETPF2 && N <= 3) fail("ETPF2 needs N > 3");
    if (variant == FilterVariant::FETPF) {
      if (N < 3) fail("FETPF needs N >= 3");
      if (M < 2) fail("FETPF needs M >= 2");
      if (!(inflation_alpha > 0.0)) fail("inflation_alpha must be positive");
      if (target_files.empty()) fail("FETPF needs at least one target file");
    }
  }
};

/// One CSV row.
struct RunResult {
  std::string experiment_id;
  std::string variant;
  std::size_t N = 0;
  std::size_t M = 0;
  double alpha = 0.0;
  double tau = 0.0;
  std::string family;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  std::size_t collapse_flags = 0;

  bool diverged() const { return !std::isfinite(rmse); }
  bool operator==(const RunResult&) const = default;
};

/// Per-replicate checks that are not part of the CSV.
struct RunDiagnostics {
  std::size_t steps_completed = 0;
  /// max over steps of |transported mean - importance mean|_inf
  double max_mean_defect = 0.0;
  /// ETPF2: max over steps of |cov(transported) - Sigma_a|_F
  double max_covariance_defect = 0.0;
  double mean_gamma = 0.0;
  std::string message;
};

struct ReplicateOutcome {
  RunResult result;
  RunDiagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return detail::splitmix64(detail::splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t truth_seed(std::uint64_t master, std::size_t replicate) {
  return mix_seed(mix_seed(master, 0x7275746875ULL), replicate);
}

inline std::uint64_t filter_seed(std::uint64_t master, std::size_t grid_index, std::size_t replicate) {
  return mix_seed(mix_seed(master, grid_index + 1), replicate);
}

// ---------------------------------------------------------------------------
// Targets

inline ShrinkageTarget resolve_target(const std::string& spec) {
  constexpr std::string_view kBuiltin = "builtin:";
  if (spec.rfind(kBuiltin, 0) == 0) {
    const std::string name = spec.substr(kBuiltin.size());
    if (name == "climatology") return make_target(reference::climatology(), name);
    if (name == "cluster1") return make_target(reference::cluster1(), name);
    if (name == "cluster2") return make_target(reference::cluster2(), name);
    throw ConfigError("unknown builtin target '" + name + "'");
  }
  Matrix m = load_matrix(spec);
  try {
    return make_target(m, std::filesystem::path(spec).stem().string());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(spec + ": " + e.what());
  }
}

inline FilterConfig filter_config(const ExperimentConfig& cfg) {
  FilterConfig f;
  f.variant = cfg.variant;
  f.tau = cfg.tau;
  f.synthetic_count = cfg.M;
  f.family = cfg.family;
  f.inflation_alpha = cfg.inflation_alpha;
  f.observation = cfg.observation;
  if (cfg.variant == FilterVariant::FETPF)
    for (const auto& spec : cfg.target_files) f.targets.push_back(resolve_target(spec));
  return f;
}

// ---------------------------------------------------------------------------
// Replicates

struct TwinData {
  std::vector<StateVector> truth;  ///< truth[0] is the initial state
  std::vector<double> observations;  ///< observations[t] observes truth[t + 1]
};

inline TwinData generate_twin(const ExperimentConfig& cfg, std::size_t replicate) {
  std::mt19937_64 rng(truth_seed(cfg.master_seed, replicate));
  std::normal_distribution<double> normal(0.0, 1.0);
  StateVector x = StateVector::Ones(3);
  for (Eigen::Index i = 0; i < 3; ++i) x(i) += 1e-2 * normal(rng);
  x = propagate(x, 100.0, substeps_for(100.0));

  const std::size_t sub = substeps_for(cfg.dt_obs);
  TwinData d;
  d.truth.reserve(cfg.total_steps + 1);
  d.observations.reserve(cfg.total_steps);
  d.truth.push_back(x);
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    x = propagate(x, cfg.dt_obs, sub);
    d.truth.push_back(x);
    d.observations.push_back(observe(x, cfg.observation, normal(rng)));
  }
  return d;
}

inline RunResult blank_result(const ExperimentConfig& cfg, std::size_t replicate, std::uint64_t seed) {
  RunResult r;
  r.experiment_id = cfg.experiment_id;
  r.variant = std::string(to_string(cfg.variant));
  r.N = cfg.N;
  r.replicate = replicate;
  r.seed = seed;
  if (cfg.variant == FilterVariant::FETPF) {
    r.M = cfg.M;
    r.alpha = cfg.inflation_alpha;
    r.family = std::string(to_string(cfg.family));
  } else {
    r.tau = cfg.tau;
    r.family = "none";
  }
  return r;
}

/// Runs one replicate. Filter failures yield rmse = +inf, never an exception.
inline ReplicateOutcome run_replicate_detailed(const ExperimentConfig& cfg, std::size_t replicate) {
  cfg.validate();
  const std::uint64_t seed = filter_seed(cfg.master_seed, cfg.grid_index, replicate);
  ReplicateOutcome out{blank_result(cfg, replicate, seed), {}};
  const FilterConfig fcfg = filter_config(cfg);
  const TwinData twin = generate_twin(cfg, replicate);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix states(3, static_cast<Eigen::Index>(cfg.N));
  for (Eigen::Index j = 0; j < states.cols(); ++j)
    for (Eigen::Index i = 0; i < 3; ++i) states(i, j) = twin.truth[0](i) + cfg.initial_spread * normal(rng);

  const std::size_t sub = substeps_for(cfg.dt_obs);
  double sq_error = 0.0;
  double gamma_sum = 0.0;
  std::size_t scored = 0;
  try {
    Ensemble ens = Ensemble::uniform(states);
    for (std::size_t t = 0; t < cfg.total_steps; ++t) {
      Matrix propagated = propagate_columns(ens.states, cfg.dt_obs, sub);
      if (!propagated.allFinite()) throw FilterDivergence("non-finite forecast state");
      const Ensemble forecast = Ensemble::uniform(std::move(propagated));
      AnalysisResult step = assimilate(forecast, twin.observations[t], fcfg, rng);

      auto& diag = out.diagnostics;
      diag.max_mean_defect = std::max(
          diag.max_mean_defect, (step.transported_mean - step.weighted_prior_mean).cwiseAbs().maxCoeff());
      if (cfg.variant == FilterVariant::ETPF2)
        diag.max_covariance_defect = std::max(
            diag.max_covariance_defect, (step.transported_covariance - step.importance_covariance).norm());
      if (step.collapsed) ++out.result.collapse_flags;
      gamma_sum += step.gamma;
      ens = std::move(step.analysis);
      ++diag.steps_completed;

      if (t >= cfg.spinup_steps) {
        sq_error += (twin.truth[t + 1] - weighted_mean(ens)).squaredNorm();
        ++scored;
      }
    }
    out.result.rmse = std::sqrt(sq_error / (3.0 * static_cast<double>(scored)));
    out.diagnostics.mean_gamma = gamma_sum / static_cast<double>(cfg.total_steps);
  } catch (const std::runtime_error& e) {
    out.result.rmse = std::numeric_limits<double>::infinity();
    out.diagnostics.message = "diverged at step " + std::to_string(out.diagnostics.steps_completed) + ": " + e.what();
  }
  return out;
}

inline RunResult run_replicate(const ExperimentConfig& cfg, std::size_t replicate) {
  return run_replicate_detailed(cfg, replicate).result;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kCsvHeader =
    "experiment_id,variant,N,M,alpha,tau,family,replicate,seed,rmse,collapse_flags";

inline void write_csv(std::ostream& os, const std::vector<RunResult>& rows) {
  os << kCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.experiment_id << ',' << r.variant << ',' << r.N << ',' << r.M << ',' << format_double(r.alpha)
       << ',' << format_double(r.tau) << ',' << r.family << ',' << r.replicate << ',' << r.seed << ','
       << format_double(r.rmse) << ',' << r.collapse_flags << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <typename T>
T parse_number(const std::string& s, std::string_view field) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IoError("CSV: cannot parse field " + std::string(field) + " from '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<RunResult> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw IoError("CSV: missing or unexpected header");
  std::vector<RunResult> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 11) throw IoError("CSV: expected 11 fields, got " + std::to_string(c.size()));
    RunResult r;
    r.experiment_id = c[0];
    r.variant = c[1];
    r.N = detail::parse_number<std::size_t>(c[2], "N");
    r.M = detail::parse_number<std::size_t>(c[3], "M");
    r.alpha = detail::parse_number<double>(c[4], "alpha");
    r.tau = detail::parse_number<double>(c[5], "tau");
    r.family = c[6];
    r.replicate = detail::parse_number<std::size_t>(c[7], "replicate");
    r.seed = detail::parse_number<std::uint64_t>(c[8], "seed");
    r.rmse = detail::parse_number<double>(c[9], "rmse");
    r.collapse_flags = detail::parse_number<std::size_t>(c[10], "collapse_flags");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Mean RMSE over the non-divergent replicates of one experiment_id.
struct AggregatePoint {
  std::string experiment_id;
  std::string variant;
  std::size_t N = 0;
  std::size_t M = 0;
  double alpha = 0.0;
  double tau = 0.0;
  std::string family;
  std::size_t completed = 0;
  std::size_t diverged = 0;
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
};

/// Groups by experiment_id in first-appearance order.
inline std::vector<AggregatePoint> aggregate(const std::vector<RunResult>& rows) {
  std::vector<AggregatePoint> points;
  std::map<std::string, std::size_t> index;
  std::vector<double> sums;
  for (const auto& r : rows) {
    auto [it, inserted] = index.try_emplace(r.experiment_id, points.size());
    if (inserted) {
      points.push_back({r.experiment_id, r.variant, r.N, r.M, r.alpha, r.tau, r.family, 0, 0,
                        std::numeric_limits<double>::quiet_NaN()});
      sums.push_back(0.0);
    }
    auto& p = points[it->second];
    if (r.diverged()) {
      ++p.diverged;
    } else {
      ++p.completed;
      sums[it->second] += r.rmse;
    }
  }
  for (std::size_t i = 0; i < points.size(); ++i)
    if (points[i].completed > 0) points[i].mean_rmse = sums[i] / static_cast<double>(points[i].completed);
  return points;
}

inline void write_summary_csv(std::ostream& os, const std::vector<AggregatePoint>& points) {
  os << "experiment_id,variant,N,M,alpha,tau,family,completed,diverged,mean_rmse\n";
  for (const auto& p : points)
    os << p.experiment_id << ',' << p.variant << ',' << p.N << ',' << p.M << ',' << format_double(p.alpha)
       << ',' << format_double(p.tau) << ',' << p.family << ',' << p.completed << ',' << p.diverged << ','
       << format_double(p.mean_rmse) << '\n';
}

// ---------------------------------------------------------------------------
// Grids

struct RunOptions {
  /// 0 selects std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

/**
 * Runs every (config, replicate) pair. Rows come back ordered by grid
 * position then replicate regardless of thread count. Each config's
 * grid_index is taken from its position in `grid`.
 */
inline std::vector<RunResult> run_experiment(std::vector<ExperimentConfig> grid, const RunOptions& opts = {}) {
  if (grid.empty()) throw ConfigError("experiment grid is empty");
  struct Job {
    std::size_t config;
    std::size_t replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    grid[g].grid_index = g;
    grid[g].validate();
    filter_config(grid[g]);  // surfaces target-file errors before any work starts
    for (std::size_t r = 0; r < grid[g].replicates; ++r) jobs.push_back({g, r});
  }

  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++)
      results[j] = run_replicate(grid[jobs[j].config], jobs[j].replicate);
  };
  std::size_t threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Presets

enum class Scale { Paper, Desk };

inline void apply_scale(ExperimentConfig& cfg, Scale scale) {
  if (scale == Scale::Paper) {
    cfg.total_steps = 10000;
    cfg.spinup_steps = 1000;
    cfg.replicates = 20;
  } else {
    cfg.total_steps = 2000;
    cfg.spinup_steps = 200;
    cfg.replicates = 5;
  }
}

inline const std::vector<std::size_t>& preset_ensemble_sizes() {
  static const std::vector<std::size_t> sizes{5, 10, 20, 30, 50, 100};
  return sizes;
}

inline std::string format_param(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

namespace detail {

inline std::vector<ExperimentConfig> figure_grid(const std::string& fig, const std::vector<std::string>& targets,
                                                 Scale scale) {
  std::vector<ExperimentConfig> grid;
  for (const std::size_t n : preset_ensemble_sizes()) {
    for (const auto variant : {FilterVariant::ETPF, FilterVariant::ETPF2}) {
      ExperimentConfig c;
      c.variant = variant;
      c.tau = 0.04;
      c.N = n;
      c.experiment_id = fig + "/" + std::string(to_string(variant)) + "-tau0.04/N" + std::to_string(n);
      grid.push_back(c);
    }
    for (const auto family : {AnomalyFamily::Gaussian, AnomalyFamily::Laplace}) {
      for (const double alpha : {1.0, 1.2}) {
        ExperimentConfig c;
        c.variant = FilterVariant::FETPF;
        c.family = family;
        c.inflation_alpha = alpha;
        c.M = 100;
        c.N = n;
        c.target_files = targets;
        c.experiment_id = fig + "/fetpf-" + std::string(to_string(family)) + "-a" + format_param(alpha) +
                          "-M100/N" + std::to_string(n);
        grid.push_back(c);
      }
    }
  }
  for (auto& c : grid) apply_scale(c, scale);
  return grid;
}

}  // namespace detail

/// Preset experiment grids: fig1 (single target), fig2 (two cluster targets), fig3 (M, alpha sweep).
inline std::vector<ExperimentConfig> preset(std::string_view name, Scale scale) {
  if (name == "fig1") return detail::figure_grid("fig1", {"builtin:climatology"}, scale);
  if (name == "fig2") return detail::figure_grid("fig2", {"builtin:cluster1", "builtin:cluster2"}, scale);
  if (name == "fig3") {
    std::vector<ExperimentConfig> grid;
    for (const std::size_t m : {10, 25, 50, 100, 200}) {
      for (const double alpha : {1.0, 1.1, 1.2, 1.5, 2.0}) {
        ExperimentConfig c;
        c.variant = FilterVariant::FETPF;
        c.family = AnomalyFamily::Gaussian;
        c.N = 5;
        c.M = m;
        c.inflation_alpha = alpha;
        c.target_files = {"builtin:climatology"};
        c.experiment_id = "fig3/fetpf-gaussian-a" + format_param(alpha) + "-M" + std::to_string(m) + "/N5";
        apply_scale(c, scale);
        grid.push_back(c);
      }
    }
    return grid;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected fig1, fig2 or fig3)");
}

inline Scale parse_scale(std::string_view s) {
  if (s == "paper") return Scale::Paper;
  if (s == "desk") return Scale::Desk;
  throw ConfigError("unknown scale '" + std::string(s) + "' (expected paper or desk)");
}

// ---------------------------------------------------------------------------
// JSON configuration

inline FilterVariant parse_variant(std::string_view s) {
  if (s == "etpf" || s == "ETPF") return FilterVariant::ETPF;
  if (s == "etpf2" || s == "ETPF2") return FilterVariant::ETPF2;
  if (s == "fetpf" || s == "FETPF") return FilterVariant::FETPF;
  throw ConfigError("unknown filter variant '" + std::string(s) + "'");
}

inline AnomalyFamily parse_family(std::string_view s) {
  if (s == "gaussian" || s == "Gaussian") return AnomalyFamily::Gaussian;
  if (s == "laplace" || s == "Laplace") return AnomalyFamily::Laplace;
  throw ConfigError("unknown anomaly family '" + std::string(s) + "'");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::vector<std::string> known{
      "experiment_id", "variant",      "tau",          "M",          "family",      "inflation_alpha",
      "observation",   "N",            "dt_obs",       "total_steps", "spinup_steps", "replicates",
      "master_seed",   "target_files", "output_path",  "initial_spread"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config field '" + key + "'");

  ExperimentConfig c;
  try {
    c.experiment_id = j.value("experiment_id", c.experiment_id);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.tau = j.value("tau", c.tau);
    c.M = j.value("M", c.M);
    if (j.contains("family")) c.family = parse_family(j.at("family").get<std::string>());
    c.inflation_alpha = j.value("inflation_alpha", c.inflation_alpha);
    if (j.contains("observation")) {
      const auto& o = j.at("observation");
      c.observation.observed_index = o.value("observed_index", c.observation.observed_index);
      c.observation.noise_variance = o.value("noise_variance", c.observation.noise_variance);
    }
    c.N = j.value("N", c.N);
    c.dt_obs = j.value("dt_obs", c.dt_obs);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.spinup_steps = j.value("spinup_steps", c.spinup_steps);
    c.replicates = j.value("replicates", c.replicates);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.target_files = j.value("target_files", c.target_files);
    c.output_path = j.value("output_path", c.output_path);
    c.initial_spread = j.value("initial_spread", c.initial_spread);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"experiment_id", c.experiment_id},
          {"variant", std::string(to_string(c.variant))},
          {"tau", c.tau},
          {"M", c.M},
          {"family", std::string(to_string(c.family))},
          {"inflation_alpha", c.inflation_alpha},
          {"observation",
           {{"observed_index", c.observation.observed_index}, {"noise_variance", c.observation.noise_variance}}},
          {"N", c.N},
          {"dt_obs", c.dt_obs},
          {"total_steps", c.total_steps},
          {"spinup_steps", c.spinup_steps},
          {"replicates", c.replicates},
          {"master_seed", c.master_seed},
          {"target_files", c.target_files},
          {"output_path", c.output_path},
          {"initial_spread", c.initial_spread}};
}

/// A single object or an array of objects (a grid). Relative target paths
/// resolve against the config file's directory.
inline std::vector<ExperimentConfig> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  std::vector<ExperimentConfig> grid;
  auto add = [&](const nlohmann::json& obj) {
    ExperimentConfig c = config_from_json(obj);
    for (auto& t : c.target_files) {
      if (t.rfind("builtin:", 0) == 0) continue;
      std::filesystem::path p(t);
      if (p.is_relative()) t = (path.parent_path() / p).string();
    }
    grid.push_back(std::move(c));
  };
  if (j.is_array()) {
    for (const auto& obj : j) add(obj);
  } else {
    add(j);
  }
  if (grid.empty()) throw ConfigError(path.string() + ": no experiments defined");
  return grid;
}

// ---------------------------------------------------------------------------
// Forecast covariances for clustering

/**
 * Runs ETPF from one truth trajectory and records the trace-normalized
 * forecast covariance at each of `samples` consecutive windows after
 * `spinup_steps` discarded windows.
 */
inline std::vector<CovarianceSample> forecast_covariance_samples(std::size_t samples, std::size_t ensemble_size,
                                                                 double tau, std::size_t spinup_steps,
                                                                 std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.N = ensemble_size;
  cfg.tau = tau;
  cfg.total_steps = samples + spinup_steps;
  cfg.spinup_steps = spinup_steps;
  cfg.master_seed = seed;
  cfg.validate();
  const TwinData twin = generate_twin(cfg, 0);
  const FilterConfig fcfg = filter_config(cfg);
  std::mt19937_64 rng(filter_seed(seed, 0, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix states(3, static_cast<Eigen::Index>(cfg.N));
  for (Eigen::Index j = 0; j < states.cols(); ++j)
    for (Eigen::Index i = 0; i < 3; ++i) states(i, j) = twin.truth[0](i) + cfg.initial_spread * normal(rng);

  const std::size_t sub = substeps_for(cfg.dt_obs);
  std::vector<CovarianceSample> out;
  out.reserve(samples);
  Ensemble ens = Ensemble::uniform(states);
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    const Ensemble forecast = Ensemble::uniform(propagate_columns(ens.states, cfg.dt_obs, sub));
    if (t >= spinup_steps) out.push_back({trace_normalize(sample_covariance(forecast.states)), t});
    ens = etpf_step(forecast, twin.observations[t], fcfg, rng).analysis;
  }
  return out;
}

}  // namespace fetpf
