// fetpf: command-line driver for the Lorenz '63 twin experiments.
//
//   fetpf run --config exp.json --out results.csv
//   fetpf run --preset fig1 --scale desk --out fig1.csv
//   fetpf climatology --samples 50000 --out target.txt
//   fetpf forecast-covs --samples 20000 --out covs/
//   fetpf cluster --k 2 --in covs/ --out targets/
//
// Exit codes: 0 success, 1 config error, 2 runtime/filter error, 3 I/O error.

#include "fetpf/fetpf.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kRuntime = 2, kIo = 3 };

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw fetpf::IoError("cannot write " + path.string());
  return out;
}

fs::path summary_path_for(const fs::path& csv) {
  fs::path p = csv;
  p.replace_filename(csv.stem().string() + "_summary.csv");
  return p;
}

struct RunArgs {
  std::string config;
  std::string preset;
  std::string scale = "desk";
  std::string out;
  std::string summary;
  std::int64_t seed = -1;
  std::size_t threads = 0;
};

int cmd_run(const RunArgs& a) {
  if (a.config.empty() == a.preset.empty())
    throw fetpf::ConfigError("run needs exactly one of --config or --preset");
  std::vector<fetpf::ExperimentConfig> grid =
      a.preset.empty() ? fetpf::load_config_file(a.config) : fetpf::preset(a.preset, fetpf::parse_scale(a.scale));
  if (a.seed >= 0)
    for (auto& c : grid) c.master_seed = static_cast<std::uint64_t>(a.seed);

  fs::path out = a.out;
  if (out.empty() && !grid.front().output_path.empty()) out = grid.front().output_path;
  if (out.empty()) throw fetpf::ConfigError("no output path (--out or output_path in config)");

  const auto rows = fetpf::run_experiment(grid, {a.threads});
  {
    auto os = open_output(out);
    fetpf::write_csv(os, rows);
    if (!os) throw fetpf::IoError("write failed for " + out.string());
  }
  const auto points = fetpf::aggregate(rows);
  const fs::path summary = a.summary.empty() ? summary_path_for(out) : fs::path(a.summary);
  {
    auto os = open_output(summary);
    fetpf::write_summary_csv(os, points);
  }
  std::size_t diverged = 0;
  for (const auto& r : rows) diverged += r.diverged() ? 1 : 0;
  std::cerr << "wrote " << rows.size() << " rows to " << out.string() << " (" << diverged
            << " diverged); summary in " << summary.string() << '\n';
  for (const auto& p : points)
    std::cerr << "  " << p.experiment_id << "  mean_rmse=" << p.mean_rmse << "  diverged=" << p.diverged << '\n';
  return kOk;
}

int cmd_climatology(std::size_t samples, double spacing, std::uint64_t seed, const fs::path& out) {
  std::mt19937_64 rng(seed);
  const auto target = fetpf::attractor_covariance(samples, spacing, rng);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  fetpf::save_matrix(out, target.covariance);
  fetpf::write_matrix(std::cout, target.covariance);
  return kOk;
}

int cmd_forecast_covs(std::size_t samples, std::size_t n, double tau, std::size_t spinup, std::uint64_t seed,
                      const fs::path& dir) {
  const auto covs = fetpf::forecast_covariance_samples(samples, n, tau, spinup, seed);
  fs::create_directories(dir);
  std::vector<fetpf::Matrix> ms;
  ms.reserve(covs.size());
  for (const auto& c : covs) ms.push_back(c.matrix);
  fetpf::save_matrices(dir / "forecast_covs.txt", ms);
  std::cerr << "wrote " << ms.size() << " covariances to " << (dir / "forecast_covs.txt").string() << '\n';
  return kOk;
}

int cmd_cluster(std::size_t k, const fs::path& in, const fs::path& out, std::uint64_t seed,
                std::size_t restarts) {
  if (!fs::is_directory(in)) throw fetpf::IoError(in.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in))
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<fetpf::CovarianceSample> samples;
  for (const auto& f : files)
    for (auto& m : fetpf::load_matrices(f)) samples.push_back({std::move(m), samples.size()});
  if (samples.empty()) throw fetpf::IoError("no covariance matrices found in " + in.string());

  fetpf::KMeansOptions opts;
  opts.restarts = restarts;
  const auto targets = fetpf::kmeans_covariances(samples, k, seed, opts);
  fs::create_directories(out);
  for (const auto& t : targets) {
    const fs::path p = out / (t.label + ".txt");
    fetpf::save_matrix(p, t.covariance);
    std::cout << p.string() << '\n';
    fetpf::write_matrix(std::cout, t.covariance);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble transform particle filters with stochastic shrinkage rejuvenation"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run an experiment grid and write per-replicate CSV");
  run->add_option("--config", run_args.config, "JSON experiment config (object or array)");
  run->add_option("--preset", run_args.preset, "Built-in campaign")->check(CLI::IsMember({"fig1", "fig2", "fig3"}));
  run->add_option("--scale", run_args.scale, "Preset scale")->check(CLI::IsMember({"paper", "desk"}));
  run->add_option("--out", run_args.out, "Output CSV path");
  run->add_option("--summary", run_args.summary, "Aggregated CSV path (default <out>_summary.csv)");
  run->add_option("--seed", run_args.seed, "Override master_seed");
  run->add_option("--threads", run_args.threads, "Worker threads (0 = hardware concurrency)");

  std::size_t clim_samples = 50000;
  double clim_spacing = 0.12;
  std::uint64_t clim_seed = 1;
  std::string clim_out;
  auto* clim = app.add_subcommand("climatology", "Attractor covariance target");
  clim->add_option("--samples", clim_samples, "Number of attractor samples");
  clim->add_option("--spacing", clim_spacing, "Time between samples");
  clim->add_option("--seed", clim_seed, "Seed for the initial perturbation");
  clim->add_option("--out", clim_out, "Target matrix file")->required();

  std::size_t fc_samples = 20000, fc_n = 100, fc_spinup = 1000;
  double fc_tau = 0.04;
  std::uint64_t fc_seed = 1;
  std::string fc_out;
  auto* fc = app.add_subcommand("forecast-covs", "Trace-normalized ETPF forecast covariances for clustering");
  fc->add_option("--samples", fc_samples, "Number of windows recorded");
  fc->add_option("--N", fc_n, "Ensemble size");
  fc->add_option("--tau", fc_tau, "Rejuvenation factor");
  fc->add_option("--spinup", fc_spinup, "Windows discarded before recording");
  fc->add_option("--seed", fc_seed, "Master seed");
  fc->add_option("--out", fc_out, "Output directory")->required();

  std::size_t k = 2, restarts = 10;
  std::uint64_t cl_seed = 1;
  std::string cl_in, cl_out;
  auto* cluster = app.add_subcommand("cluster", "k-means (Frobenius) centroids of covariance files");
  cluster->add_option("--k", k, "Number of clusters");
  cluster->add_option("--in", cl_in, "Directory of .txt matrix files")->required();
  cluster->add_option("--out", cl_out, "Output directory for centroid targets")->required();
  cluster->add_option("--seed", cl_seed, "Seed for k-means initialization");
  cluster->add_option("--restarts", restarts, "Seeded restarts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*clim) return cmd_climatology(clim_samples, clim_spacing, clim_seed, clim_out);
    if (*fc) return cmd_forecast_covs(fc_samples, fc_n, fc_tau, fc_spinup, fc_seed, fc_out);
    if (*cluster) return cmd_cluster(k, cl_in, cl_out, cl_seed, restarts);
  } catch (const fetpf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fetpf::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
