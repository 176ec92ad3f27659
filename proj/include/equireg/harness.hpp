#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/data.hpp"
#include "equireg/metrics.hpp"
#include "equireg/samplers.hpp"

namespace equireg {

struct ScheduleSpec {
  int steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

/// One experiment, fully determined by this object and the seed list.
///
/// Keys (all optional except dataset, operator and sampler):
///   name, dataset, test {n, seed}, schedule {steps, beta_min, beta_max},
///   score_model {type: analytic | train | checkpoint, path, ...DenoiserConfig},
///   latent_score_model {type: train | checkpoint, ...}, autoencoder {...AutoencoderConfig, group, path},
///   mpe {role, group}, operator, sampler, samples_per_image, measurement_seed,
///   sweep {lambda, period, steps, mask_size, k_split, algorithm, zeta}, seeds, out,
///   metrics {sw_projections, oracle_samples, manifold {kind: ring | prior-means, radius, plane}}.
struct ExperimentConfig {
  std::string name = "experiment";
  nlohmann::json dataset;
  std::size_t test_n = 10;
  std::uint64_t test_seed = 1000;
  ScheduleSpec schedule;
  nlohmann::json score_model = {{"type", "analytic"}};
  nlohmann::json latent_score_model;
  nlohmann::json autoencoder;
  nlohmann::json mpe;
  nlohmann::json op;
  SamplerConfig sampler;
  std::size_t samples_per_image = 1;
  std::uint64_t measurement_seed = 0;
  nlohmann::json sweep = nlohmann::json::object();
  std::vector<std::uint64_t> seeds = {0};
  std::string out = "runs/experiment";
  std::size_t sw_projections = 64;
  std::size_t oracle_samples = 2000;
  nlohmann::json manifold;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Everything a run needs, built once and shared read-only between workers.
struct Prepared {
  ExperimentConfig cfg;
  NoiseSchedule schedule;
  Dataset test;
  std::optional<GMMPrior> prior;
  std::shared_ptr<const ScoreModel> model;
  std::shared_ptr<const ScoreModel> latent_model;
  std::shared_ptr<const Autoencoder> ae;
  std::shared_ptr<const MPEFunction> mpe;
};

/// Loads checkpoints from `<out>/checkpoints` (or the configured paths) and
/// throws IoError when a model the sampler needs has not been trained.
Prepared prepare(const ExperimentConfig& cfg);
/// Trains what the config asks for, in memory, without touching disk.
Prepared prepare_in_memory(const ExperimentConfig& cfg);

/// Metrics of one (sampler config, seed) cell, averaged over test images.
struct CellResult {
  MetricReport metrics;
  SamplerCounters counters;
  double wall_seconds = 0.0;
  std::vector<std::vector<Tensor>> samples;  // [image][k]
  std::vector<Trajectory> first_traces;      // sample 0 of every image
};

CellResult run_cell(const Prepared& p, const SamplerConfig& sampler, const nlohmann::json& op_spec,
                    std::uint64_t seed);

/// Cartesian product of the sweep axes, each as {axis: value} overrides.
std::vector<nlohmann::json> sweep_cells(const nlohmann::json& sweep);
/// Applies a cell's overrides to the sampler config and operator spec.
void apply_cell(const nlohmann::json& cell, SamplerConfig& sampler, nlohmann::json& op_spec);

struct SweepRow {
  std::size_t cell = 0;
  nlohmann::json axes;
  std::uint64_t seed = 0;
  CellResult result;
};

/// Runs every cell x seed on `threads` workers; rows come back in cell-major,
/// seed-minor order regardless of scheduling.
std::vector<SweepRow> run_sweep(const Prepared& p, std::size_t threads);
std::string sweep_csv(const std::vector<SweepRow>& rows, bool include_runtime = true);

// CLI verbs. Each returns the files it wrote.
std::vector<std::filesystem::path> cmd_gen_data(const ExperimentConfig& cfg);
std::vector<std::filesystem::path> cmd_train(const ExperimentConfig& cfg);
/// Writes samples, per-step traces, report.json and manifest.json. The
/// manifest hash covers config, seeds, code version and every output except
/// wall-clock timings.
std::vector<std::filesystem::path> cmd_run(const ExperimentConfig& cfg, std::size_t threads = 1);
std::vector<std::filesystem::path> cmd_sweep(const ExperimentConfig& cfg, std::size_t threads = 1);
/// Aggregates sweep.csv / report.json found in `run_dir` into aggregate.json,
/// aggregate.csv and one plot-ready .dat file per sweep axis.
std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& run_dir);

/// Hash stored in the manifest written by cmd_run.
std::string read_report_hash(const std::filesystem::path& run_dir);

}  // namespace equireg
