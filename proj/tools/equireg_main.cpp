#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "equireg/error.hpp"
#include "equireg/harness.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(csv);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(tok, &used);
    if (used != tok.size()) throw equireg::ConfigError("--seeds: '" + tok + "' is not an integer");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw equireg::ConfigError("--seeds needs at least one seed");
  return seeds;
}

std::size_t env_threads() {
  if (const char* t = std::getenv("EQUIREG_THREADS")) return std::stoul(t);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equireg: equivariance-regularised diffusion posterior sampling experiments"};
  app.require_subcommand(1);

  std::string config, out, seeds, run_dir;
  std::size_t threads = env_threads();

  auto add_common = [&](CLI::App* sub, bool with_run_flags) {
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides the config and EQUIREG_OUT)");
    if (with_run_flags) {
      sub->add_option("--seeds", seeds, "comma-separated sampler seeds, e.g. 0,1,2");
      sub->add_option("--threads", threads, "worker threads (default EQUIREG_THREADS or 1)")
          ->check(CLI::PositiveNumber);
    }
  };
  auto* gen = app.add_subcommand("gen-data", "generate the training and test datasets");
  add_common(gen, false);
  auto* train = app.add_subcommand("train", "train the denoiser and autoencoder checkpoints");
  add_common(train, false);
  auto* run = app.add_subcommand("run", "run the configured sampler on the test set");
  add_common(run, true);
  auto* sweep = app.add_subcommand("sweep", "run every cell of the configured sweep");
  add_common(sweep, true);
  auto* report = app.add_subcommand("report", "aggregate a run or sweep directory");
  report->add_option("--out,run_dir", run_dir, "run or sweep directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      for (const auto& f : equireg::cmd_report(run_dir)) std::cout << f.string() << '\n';
      return 0;
    }
    auto cfg = equireg::ExperimentConfig::load(config);
    if (!out.empty()) cfg.out = out;
    else if (const char* root = std::getenv("EQUIREG_OUT")) cfg.out = (std::filesystem::path(root) / cfg.out).string();
    if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);

    std::vector<std::filesystem::path> files;
    if (gen->parsed()) files = equireg::cmd_gen_data(cfg);
    else if (train->parsed()) files = equireg::cmd_train(cfg);
    else if (run->parsed()) files = equireg::cmd_run(cfg, threads);
    else if (sweep->parsed()) files = equireg::cmd_sweep(cfg, threads);
    for (const auto& f : files) std::cout << f.string() << '\n';
    if (run->parsed()) std::cout << "report_hash " << equireg::read_report_hash(cfg.out) << '\n';
  } catch (const equireg::Error& e) {
    std::cerr << "equireg: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "equireg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
