#include "equireg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "equireg/error.hpp"
#include "equireg/serialize.hpp"

namespace equireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kAxes = {"algorithm", "lambda", "period", "steps",
                                        "mask_size", "k_split", "zeta",   "detached"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix64 finaliser over the running state
  std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> vs) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto v : vs) h = mix(h, v);
  return h;
}

fs::path checkpoint_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out) / "checkpoints"; }

fs::path checkpoint_path(const ExperimentConfig& cfg, const json& spec, const char* default_name) {
  if (spec.is_object() && spec.contains("path")) return spec.at("path").get<std::string>();
  return checkpoint_dir(cfg) / default_name;
}

bool needs_latent(const ExperimentConfig& cfg) {
  if (is_latent(cfg.sampler.algorithm)) return true;
  if (cfg.sweep.contains("algorithm")) {
    for (const auto& a : cfg.sweep.at("algorithm")) {
      if (is_latent(parse_algorithm(a.get<std::string>()))) return true;
    }
  }
  return false;
}

bool needs_mpe(const ExperimentConfig& cfg) {
  if (is_regularized(cfg.sampler.algorithm)) return true;
  if (cfg.sweep.contains("algorithm")) {
    for (const auto& a : cfg.sweep.at("algorithm")) {
      if (is_regularized(parse_algorithm(a.get<std::string>()))) return true;
    }
  }
  return false;
}

Dataset training_set(const ExperimentConfig& cfg) { return generate_dataset(cfg.dataset); }

std::shared_ptr<DenoiserScore> train_pixel_denoiser(const ExperimentConfig& cfg, const NoiseSchedule& sched) {
  auto ds = training_set(cfg);
  return train_denoiser(ds.items, sched, DenoiserConfig::from_json(without(cfg.score_model, {"type", "path"})));
}

std::shared_ptr<Autoencoder> train_ae(const ExperimentConfig& cfg) {
  auto ds = training_set(cfg);
  const auto group = cfg.autoencoder.value("group", json{{"group", "flip-h"}});
  auto action = GroupAction::from_config(group, ds.item_shape());
  return train_autoencoder_augmented(ds.items, action,
                                     AutoencoderConfig::from_json(without(cfg.autoencoder, {"group", "path"})));
}

std::shared_ptr<DenoiserScore> train_latent_denoiser(const ExperimentConfig& cfg, const NoiseSchedule& sched,
                                                     const Autoencoder& ae) {
  auto ds = training_set(cfg);
  std::vector<Tensor> latents;
  latents.reserve(ds.size());
  for (const auto& x : ds.items) latents.push_back(ae.encode(x).detach());
  return train_denoiser(latents, sched, DenoiserConfig::from_json(without(cfg.latent_score_model, {"type", "path"})));
}

void finish_prepare(Prepared& p) {
  const auto& cfg = p.cfg;
  if (needs_mpe(cfg)) {
    if (!p.ae) throw ConfigError("regularised samplers need an autoencoder block for the MPE function");
    const bool latent = is_latent(cfg.sampler.algorithm);
    const json mpe = cfg.mpe.is_null() ? json::object() : cfg.mpe;
    const auto role = parse_mpe_role(mpe.value("role", std::string(latent ? "decoder" : "encoder")));
    const auto group = mpe.value("group", cfg.autoencoder.value("group", json{{"group", "flip-h"}}));
    p.mpe = std::make_shared<MPEFunction>(MPEFunction::from_autoencoder(p.ae, role, group));
  }
}

Prepared prepare_common(const ExperimentConfig& cfg) {
  Prepared p;
  p.cfg = cfg;
  p.schedule = make_linear_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
  json test_spec = cfg.dataset;
  test_spec["n"] = cfg.test_n;
  test_spec["seed"] = cfg.test_seed;
  p.test = generate_dataset(test_spec);
  p.prior = dataset_prior(cfg.dataset);
  return p;
}

double manifold_distance(const json& manifold, const GMMPrior* prior, const Tensor& x) {
  const auto kind = manifold.at("kind").get<std::string>();
  const auto& v = x.data();
  if (kind == "ring") {
    const double r = manifold.value("radius", 1.0);
    const auto plane = manifold.value("plane", std::vector<std::size_t>{0, 1});
    double in = 0.0, out = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i == plane[0] || i == plane[1]) in += v[i] * v[i];
      else out += v[i] * v[i];
    }
    const double radial = std::sqrt(in) - r;
    return std::sqrt(radial * radial + out);
  }
  if (kind == "prior-means") {
    if (!prior) throw ConfigError("manifold kind prior-means needs a dataset with an analytic prior");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& mu : prior->means) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) d2 += (v[i] - mu(static_cast<Eigen::Index>(i))) * (v[i] - mu(static_cast<Eigen::Index>(i)));
      best = std::min(best, d2);
    }
    return std::sqrt(best);
  }
  throw ConfigError("unknown manifold kind '" + kind + "'");
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(10);
  o << v;
  return o.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json counters_json(const SamplerCounters& c) {
  return {{"score_evals", c.score_evals},       {"score_vjps", c.score_vjps}, {"guidance_grads", c.guidance_grads},
          {"reg_grads", c.reg_grads},           {"inner_meas", c.inner_meas}, {"inner_equi", c.inner_equi},
          {"resampled", c.resampled}};
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j,
             {"name", "dataset", "test", "schedule", "score_model", "latent_score_model", "autoencoder", "mpe",
              "operator", "sampler", "samples_per_image", "measurement_seed", "sweep", "seeds", "out", "metrics"},
             "experiment config");
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.dataset = j.at("dataset");
    if (j.contains("test")) {
      check_keys(j.at("test"), {"n", "seed"}, "test");
      c.test_n = j.at("test").value("n", c.test_n);
      c.test_seed = j.at("test").value("seed", c.test_seed);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"steps", "beta_min", "beta_max"}, "schedule");
      c.schedule.steps = s.value("steps", c.schedule.steps);
      c.schedule.beta_min = s.value("beta_min", c.schedule.beta_min);
      c.schedule.beta_max = s.value("beta_max", c.schedule.beta_max);
    }
    if (j.contains("score_model")) c.score_model = j.at("score_model");
    if (j.contains("latent_score_model")) c.latent_score_model = j.at("latent_score_model");
    if (j.contains("autoencoder")) c.autoencoder = j.at("autoencoder");
    if (j.contains("mpe")) c.mpe = j.at("mpe");
    c.op = j.at("operator");
    c.sampler = SamplerConfig::from_json(j.at("sampler"));
    c.samples_per_image = j.value("samples_per_image", c.samples_per_image);
    c.measurement_seed = j.value("measurement_seed", c.measurement_seed);
    if (j.contains("sweep")) c.sweep = j.at("sweep");
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out = j.value("out", c.out);
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      check_keys(m, {"sw_projections", "oracle_samples", "manifold"}, "metrics");
      c.sw_projections = m.value("sw_projections", c.sw_projections);
      c.oracle_samples = m.value("oracle_samples", c.oracle_samples);
      if (m.contains("manifold")) c.manifold = m.at("manifold");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }

  // Validate every block now so a bad config fails before any work is done.
  const Shape shape = dataset_item_shape(c.dataset);
  MeasurementOperator::make(c.op, shape);
  const auto type = c.score_model.value("type", std::string("analytic"));
  if (type == "analytic") {
    check_keys(c.score_model, {"type"}, "score_model");
    if (!dataset_prior(c.dataset)) throw ConfigError("analytic score model needs a gmm-points or template-gmm dataset");
  } else if (type == "train" || type == "checkpoint") {
    DenoiserConfig::from_json(without(c.score_model, {"type", "path"}));
  } else {
    throw ConfigError("score_model.type must be analytic, train or checkpoint");
  }
  if (!c.latent_score_model.is_null()) DenoiserConfig::from_json(without(c.latent_score_model, {"type", "path"}));
  if (!c.autoencoder.is_null()) {
    AutoencoderConfig::from_json(without(c.autoencoder, {"group", "path"}));
    GroupAction::from_config(c.autoencoder.value("group", json{{"group", "flip-h"}}), shape);
  }
  if (!c.mpe.is_null()) check_keys(c.mpe, {"role", "group"}, "mpe");
  check_keys(c.sweep, {kAxes.begin(), kAxes.end()}, "sweep");
  for (auto it = c.sweep.begin(); it != c.sweep.end(); ++it) {
    if (!it->is_array() || it->empty()) throw ConfigError("sweep axis '" + it.key() + "' needs a non-empty list");
  }
  if (c.sweep.contains("mask_size") && c.op.value("kind", std::string()) != "box-inpaint") {
    throw ConfigError("the mask_size axis needs a box-inpaint operator");
  }
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.samples_per_image == 0) throw ConfigError("samples_per_image must be >= 1");
  if (!c.manifold.is_null()) check_keys(c.manifold, {"kind", "radius", "plane"}, "metrics.manifold");
  c.sampler.validate(c.schedule.steps);
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j = {{"name", name},
            {"dataset", dataset},
            {"test", {{"n", test_n}, {"seed", test_seed}}},
            {"schedule", {{"steps", schedule.steps}, {"beta_min", schedule.beta_min}, {"beta_max", schedule.beta_max}}},
            {"score_model", score_model},
            {"operator", op},
            {"sampler", sampler.to_json()},
            {"samples_per_image", samples_per_image},
            {"measurement_seed", measurement_seed},
            {"sweep", sweep},
            {"seeds", seeds},
            {"out", out},
            {"metrics", {{"sw_projections", sw_projections}, {"oracle_samples", oracle_samples}}}};
  if (!latent_score_model.is_null()) j["latent_score_model"] = latent_score_model;
  if (!autoencoder.is_null()) j["autoencoder"] = autoencoder;
  if (!mpe.is_null()) j["mpe"] = mpe;
  if (!manifold.is_null()) j["metrics"]["manifold"] = manifold;
  return j;
}

Prepared prepare_in_memory(const ExperimentConfig& cfg) {
  Prepared p = prepare_common(cfg);
  const auto type = cfg.score_model.value("type", std::string("analytic"));
  if (type == "analytic") {
    p.model = std::make_shared<AnalyticGmmScore>(*p.prior, p.schedule, p.test.item_shape());
  } else if (type == "train") {
    p.model = train_pixel_denoiser(cfg, p.schedule);
  } else {
    p.model = load_score_model(checkpoint_path(cfg, cfg.score_model, "denoiser.bin"));
  }
  if (!cfg.autoencoder.is_null()) {
    p.ae = cfg.autoencoder.contains("path") ? load_autoencoder(cfg.autoencoder.at("path").get<std::string>())
                                           : std::shared_ptr<const Autoencoder>(train_ae(cfg));
  }
  if (needs_latent(cfg)) {
    if (!p.ae) throw ConfigError("latent samplers need an autoencoder block");
    if (cfg.latent_score_model.is_null()) throw ConfigError("latent samplers need a latent_score_model block");
    if (cfg.latent_score_model.contains("path")) {
      p.latent_model = load_score_model(cfg.latent_score_model.at("path").get<std::string>());
    } else {
      p.latent_model = train_latent_denoiser(cfg, p.schedule, *p.ae);
    }
  }
  finish_prepare(p);
  return p;
}

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p = prepare_common(cfg);
  auto require = [](const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string() + " (run the train verb first)");
    return path;
  };
  const auto type = cfg.score_model.value("type", std::string("analytic"));
  if (type == "analytic") {
    p.model = std::make_shared<AnalyticGmmScore>(*p.prior, p.schedule, p.test.item_shape());
  } else {
    p.model = load_score_model(require(checkpoint_path(cfg, cfg.score_model, "denoiser.bin")));
  }
  if (!cfg.autoencoder.is_null()) p.ae = load_autoencoder(require(checkpoint_path(cfg, cfg.autoencoder, "autoencoder.bin")));
  if (needs_latent(cfg)) {
    if (!p.ae) throw ConfigError("latent samplers need an autoencoder block");
    p.latent_model = load_score_model(require(checkpoint_path(cfg, cfg.latent_score_model, "latent_denoiser.bin")));
  }
  if (p.model->schedule().steps() != cfg.schedule.steps) {
    throw ConfigError("checkpoint schedule length differs from the config schedule");
  }
  finish_prepare(p);
  return p;
}

CellResult run_cell(const Prepared& p, const SamplerConfig& sampler, const json& op_spec, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = p.cfg;
  const auto op = MeasurementOperator::make(op_spec, p.test.item_shape());
  const bool latent = is_latent(sampler.algorithm);
  const bool oracle = p.prior && op.linear() && op.sigma_y() > 0.0 && p.prior->dim() <= 64 &&
                      cfg.samples_per_image >= 2 && baseline_of(sampler.algorithm) != Algorithm::ancestral;
  CellResult res;
  double psnr_sum = 0.0, ssim_sum = 0.0, sw_sum = 0.0, intra_sum = 0.0, std_sum = 0.0, manifold_sum = 0.0;
  std::size_t manifold_n = 0, oracle_manifold_n = 0;
  double oracle_manifold_sum = 0.0;
  const std::size_t n_img = p.test.size();
  for (std::size_t i = 0; i < n_img; ++i) {
    const Tensor& truth = p.test.items[i];
    auto m = forward(op, truth, mix({cfg.measurement_seed, seed, i}));
    SamplerInputs in;
    in.model = latent ? p.latent_model.get() : p.model.get();
    in.op = &op;
    in.y = m.y;
    in.ae = p.ae.get();
    in.mpe = is_regularized(sampler.algorithm) ? p.mpe.get() : nullptr;
    std::vector<Tensor> samples;
    double psnr_img = 0.0, ssim_img = 0.0;
    for (std::size_t k = 0; k < cfg.samples_per_image; ++k) {
      SamplerConfig sc = sampler;
      sc.seed = mix({seed, i, k, 0x5eedULL});
      sc.record_states = false;
      auto traj = run_sampler(sc, in);
      const auto& c = traj.counters;
      res.counters.score_evals += c.score_evals;
      res.counters.score_vjps += c.score_vjps;
      res.counters.guidance_grads += c.guidance_grads;
      res.counters.reg_grads += c.reg_grads;
      res.counters.inner_meas += c.inner_meas;
      res.counters.inner_equi += c.inner_equi;
      res.counters.resampled += c.resampled;
      psnr_img += psnr(traj.sample, truth);
      ssim_img += ssim(traj.sample, truth);
      if (!cfg.manifold.is_null()) {
        manifold_sum += manifold_distance(cfg.manifold, p.prior ? &*p.prior : nullptr, traj.sample);
        ++manifold_n;
      }
      samples.push_back(traj.sample);
      if (k == 0) {
        traj.wall_seconds = 0.0;
        res.first_traces.push_back(std::move(traj));
      }
    }
    psnr_sum += psnr_img / static_cast<double>(samples.size());
    ssim_sum += ssim_img / static_cast<double>(samples.size());
    const auto div = diversity(samples);
    intra_sum += div.intra_dist;
    std_sum += div.pixel_std;
    if (oracle) {
      auto post = gmm_posterior_exact(*p.prior, op, m.y);
      Rng orng(mix({seed, i, 0x0acdULL}));
      Eigen::MatrixXd ref = sample_gmm_matrix(post.posterior, cfg.oracle_samples, orng);
      sw_sum += sliced_wasserstein(stack_samples(samples), ref, cfg.sw_projections, orng);
      if (!cfg.manifold.is_null()) {
        // Reference level: the same distance for exact posterior draws.
        for (Eigen::Index r = 0; r < ref.rows(); ++r) {
          Eigen::VectorXd row = ref.row(r).transpose();
          oracle_manifold_sum += manifold_distance(cfg.manifold, &*p.prior,
                                                   Tensor(truth.shape(), std::vector<double>(row.data(), row.data() + row.size())));
        }
        oracle_manifold_n += static_cast<std::size_t>(ref.rows());
      }
    }
    res.samples.push_back(std::move(samples));
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, n_img));
  res.metrics.psnr = psnr_sum / n;
  res.metrics.ssim = ssim_sum / n;
  res.metrics.sw2 = oracle ? sw_sum / n : std::numeric_limits<double>::quiet_NaN();
  res.metrics.intra_dist = intra_sum / n;
  res.metrics.pixel_std = std_sum / n;
  if (manifold_n) res.metrics.extra["dist_manifold"] = manifold_sum / static_cast<double>(manifold_n);
  if (oracle_manifold_n) {
    res.metrics.extra["dist_manifold_oracle"] = oracle_manifold_sum / static_cast<double>(oracle_manifold_n);
  }
  for (const auto& im : res.samples) {
    for (const auto& s : im) {
      for (double v : s.data()) {
        if (!std::isfinite(v)) throw NumericError("run_cell: non-finite sample");
      }
    }
  }
  if (!std::isfinite(res.metrics.psnr) || !std::isfinite(res.metrics.ssim)) {
    throw NumericError("run_cell: non-finite metric");
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<json> sweep_cells(const json& sweep) {
  std::vector<json> cells{json::object()};
  for (const auto& axis : kAxes) {
    if (!sweep.contains(axis)) continue;
    std::vector<json> next;
    for (const auto& c : cells) {
      for (const auto& v : sweep.at(axis)) {
        json cell = c;
        cell[axis] = v;
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

void apply_cell(const json& cell, SamplerConfig& s, json& op_spec) {
  try {
    for (auto it = cell.begin(); it != cell.end(); ++it) {
      const auto& k = it.key();
      if (k == "algorithm") s.algorithm = parse_algorithm(it->get<std::string>());
      else if (k == "lambda") s.equi.lambda = it->get<double>();
      else if (k == "period") s.equi.period = it->get<std::size_t>();
      else if (k == "steps") s.steps = it->get<int>();
      else if (k == "mask_size") op_spec["size"] = it->get<std::size_t>();
      else if (k == "k_split") {
        const auto split = it->get<std::vector<int>>();
        if (split.size() != 2) throw ConfigError("k_split entries are [k_meas, k_equi] pairs");
        s.k_meas = split[0];
        s.k_equi = split[1];
      } else if (k == "zeta") s.zeta = it->get<double>();
      else if (k == "detached") s.detached = it->get<bool>();
      else throw ConfigError("unknown sweep axis '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep cell: ") + e.what());
  }
}

std::vector<SweepRow> run_sweep(const Prepared& p, std::size_t threads) {
  const auto cells = sweep_cells(p.cfg.sweep);
  const auto& seeds = p.cfg.seeds;
  std::vector<SweepRow> rows(cells.size() * seeds.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      auto& r = rows[c * seeds.size() + s];
      r.cell = c;
      r.axes = cells[c];
      r.seed = seeds[s];
    }
  }
  parallel_for(rows.size(), threads, [&](std::size_t idx) {
    auto& r = rows[idx];
    SamplerConfig sc = p.cfg.sampler;
    json op_spec = p.cfg.op;
    apply_cell(r.axes, sc, op_spec);
    sc.validate(p.schedule.steps());
    r.result = run_cell(p, sc, op_spec, r.seed);
    r.result.samples.clear();
    r.result.first_traces.clear();
  });
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, bool include_runtime) {
  std::ostringstream out;
  std::vector<std::string> axes;
  if (!rows.empty()) {
    for (const auto& a : kAxes) {
      if (rows.front().axes.contains(a)) axes.push_back(a);
    }
  }
  out << "cell,seed";
  for (const auto& a : axes) out << ',' << a;
  out << ",psnr,ssim,sw2,intra_dist,pixel_std,dist_manifold,dist_manifold_oracle";
  if (include_runtime) out << ",runtime_s";
  out << ",score_evals,score_vjps,guidance_grads,reg_grads,inner_meas,inner_equi\n";
  for (const auto& r : rows) {
    out << r.cell << ',' << r.seed;
    for (const auto& a : axes) {
      auto v = r.axes.at(a);
      out << ',' << (v.is_string() ? v.get<std::string>() : v.is_array() ? "\"" + v.dump() + "\"" : v.dump());
    }
    const auto& m = r.result.metrics;
    auto extra = [&](const char* key) { return m.extra.count(key) ? m.extra.at(key) : std::nan(""); };
    out << ',' << fmt(m.psnr) << ',' << fmt(m.ssim) << ',' << fmt(m.sw2) << ',' << fmt(m.intra_dist) << ','
        << fmt(m.pixel_std) << ',' << fmt(extra("dist_manifold")) << ',' << fmt(extra("dist_manifold_oracle"));
    if (include_runtime) out << ',' << fmt(r.result.wall_seconds);
    const auto& c = r.result.counters;
    out << ',' << c.score_evals << ',' << c.score_vjps << ',' << c.guidance_grads << ',' << c.reg_grads << ','
        << c.inner_meas << ',' << c.inner_equi << '\n';
  }
  return out.str();
}

std::vector<fs::path> cmd_gen_data(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.out) / "data";
  fs::create_directories(dir);
  auto train = training_set(cfg);
  auto p = prepare_common(cfg);
  save_dataset(dir / "train.bin", train);
  save_dataset(dir / "test.bin", p.test);
  return {dir / "train.bin", dir / "test.bin"};
}

std::vector<fs::path> cmd_train(const ExperimentConfig& cfg) {
  const fs::path dir = checkpoint_dir(cfg);
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto sched = make_linear_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
  json stats = json::object();
  if (cfg.score_model.value("type", std::string("analytic")) == "train") {
    auto model = train_pixel_denoiser(cfg, sched);
    const auto path = checkpoint_path(cfg, cfg.score_model, "denoiser.bin");
    save_score_model(path, *model);
    written.push_back(path);
    stats["denoiser"] = {{"initial_loss", model->initial_loss}, {"final_loss", model->final_loss},
                         {"steps", model->train_steps}};
  }
  std::shared_ptr<Autoencoder> ae;
  if (!cfg.autoencoder.is_null()) {
    ae = train_ae(cfg);
    const auto path = checkpoint_path(cfg, cfg.autoencoder, "autoencoder.bin");
    save_autoencoder(path, *ae);
    written.push_back(path);
    stats["autoencoder"] = {{"holdout_mse", ae->holdout_mse},
                            {"data_variance", ae->data_variance},
                            {"within_tolerance", ae->within_tolerance()}};
  }
  if (needs_latent(cfg)) {
    if (!ae) throw ConfigError("latent samplers need an autoencoder block");
    auto model = train_latent_denoiser(cfg, sched, *ae);
    const auto path = checkpoint_path(cfg, cfg.latent_score_model, "latent_denoiser.bin");
    save_score_model(path, *model);
    written.push_back(path);
    stats["latent_denoiser"] = {{"initial_loss", model->initial_loss}, {"final_loss", model->final_loss}};
  }
  write_json(dir / "train.json", stats);
  written.push_back(dir / "train.json");
  return written;
}

std::vector<fs::path> cmd_run(const ExperimentConfig& cfg, std::size_t threads) {
  const auto p = prepare(cfg);
  const fs::path out = cfg.out;
  fs::create_directories(out / "samples");
  fs::create_directories(out / "traces");
  std::vector<CellResult> results(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), threads,
               [&](std::size_t s) { results[s] = run_cell(p, cfg.sampler, cfg.op, cfg.seeds[s]); });

  std::vector<fs::path> hashed;
  json per_seed = json::array(), runtime = json::object();
  MetricReport mean;
  for (std::size_t s = 0; s < results.size(); ++s) {
    const auto& r = results[s];
    const auto seed = cfg.seeds[s];
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const std::string stem = "seed" + std::to_string(seed) + "_img" + std::to_string(i);
      Bundle b;
      b.manifest = {{"format", "equireg-samples"}, {"seed", seed}, {"image", i}};
      b.tensors = r.samples[i];
      save_bundle(out / "samples" / (stem + ".bin"), b);
      write_text(out / "traces" / (stem + ".csv"), r.first_traces[i].steps_csv());
      write_json(out / "traces" / (stem + ".json"), r.first_traces[i].summary(cfg.sampler, false));
      hashed.push_back(out / "samples" / (stem + ".bin"));
      hashed.push_back(out / "traces" / (stem + ".csv"));
      hashed.push_back(out / "traces" / (stem + ".json"));
    }
    per_seed.push_back({{"seed", seed}, {"metrics", r.metrics.to_json()}, {"counters", counters_json(r.counters)}});
    runtime[std::to_string(seed)] = r.wall_seconds;
    const double w = 1.0 / static_cast<double>(results.size());
    mean.psnr += w * r.metrics.psnr;
    mean.ssim += w * r.metrics.ssim;
    mean.sw2 += w * r.metrics.sw2;
    mean.intra_dist += w * r.metrics.intra_dist;
    mean.pixel_std += w * r.metrics.pixel_std;
    for (const auto& [k, v] : r.metrics.extra) mean.extra[k] += w * v;
  }
  write_json(out / "report.json", {{"name", cfg.name},
                                   {"algorithm", algorithm_name(cfg.sampler.algorithm)},
                                   {"mean", mean.to_json()},
                                   {"per_seed", per_seed}});
  hashed.push_back(out / "report.json");
  write_json(out / "runtime.json", runtime);

  json files = json::object();
  std::string material = cfg.to_json().dump() + "|" + json(cfg.seeds).dump() + "|" + EQUIREG_VERSION;
  for (const auto& f : hashed) {
    const auto rel = fs::relative(f, out).generic_string();
    files[rel] = file_digest(f);
  }
  for (auto it = files.begin(); it != files.end(); ++it) material += "|" + it.key() + ":" + it->get<std::string>();
  const auto report_hash = digest_hex(material);
  write_json(out / "manifest.json", {{"config", cfg.to_json()},
                                     {"seeds", cfg.seeds},
                                     {"version", EQUIREG_VERSION},
                                     {"files", files},
                                     {"report_hash", report_hash}});
  hashed.push_back(out / "runtime.json");
  hashed.push_back(out / "manifest.json");
  return hashed;
}

std::vector<fs::path> cmd_sweep(const ExperimentConfig& cfg, std::size_t threads) {
  const auto p = prepare(cfg);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  const auto rows = run_sweep(p, threads);
  write_text(out / "sweep.csv", sweep_csv(rows));
  json js = json::array();
  for (const auto& r : rows) {
    js.push_back({{"cell", r.cell},
                  {"axes", r.axes},
                  {"seed", r.seed},
                  {"metrics", r.result.metrics.to_json()},
                  {"counters", counters_json(r.result.counters)},
                  {"runtime_s", r.result.wall_seconds}});
  }
  write_json(out / "sweep.json", js);
  const auto hash = digest_hex(cfg.to_json().dump() + "|" + EQUIREG_VERSION + "|" + sweep_csv(rows, false));
  write_json(out / "manifest.json", {{"config", cfg.to_json()},
                                     {"seeds", cfg.seeds},
                                     {"version", EQUIREG_VERSION},
                                     {"report_hash", hash}});
  return {out / "sweep.csv", out / "sweep.json", out / "manifest.json"};
}

namespace {

struct Stat {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  void add(double v) {
    if (!std::isfinite(v)) return;
    sum += v;
    sum2 += v * v;
    ++n;
  }
  json to_json() const {
    if (n == 0) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
    const double m = sum / static_cast<double>(n);
    const double var = n > 1 ? std::max(0.0, (sum2 - n * m * m) / static_cast<double>(n - 1)) : 0.0;
    return {{"mean", m}, {"std", std::sqrt(var)}, {"n", n}};
  }
};

const std::vector<std::string> kMetricNames = {
    "psnr",      "ssim",           "sw2",         "intra_dist", "pixel_std",  "dist_manifold", "dist_manifold_oracle",
    "reg_grads", "guidance_grads", "score_evals", "inner_meas", "inner_equi", "runtime_s"};

double metric_of(const json& row, const std::string& name) {
  const auto& m = row.at("metrics");
  if (m.contains(name)) return m.at(name).is_number() ? m.at(name).get<double>() : std::nan("");
  if (m.contains("extra") && m.at("extra").contains(name)) return m.at("extra").at(name).get<double>();
  if (row.contains("counters") && row.at("counters").contains(name)) return row.at("counters").at(name).get<double>();
  if (row.contains(name) && row.at(name).is_number()) return row.at(name).get<double>();
  return std::nan("");
}

json aggregate(const std::vector<json>& rows) {
  std::map<std::string, Stat> stats;
  for (const auto& r : rows) {
    for (const auto& name : kMetricNames) stats[name].add(metric_of(r, name));
  }
  json j = json::object();
  for (const auto& [k, s] : stats) j[k] = s.to_json();
  return j;
}

}  // namespace

std::vector<fs::path> cmd_report(const fs::path& run_dir) {
  std::vector<fs::path> written;
  if (fs::exists(run_dir / "sweep.json")) {
    const auto rows = json::parse(read_text(run_dir / "sweep.json"));
    std::map<std::size_t, std::vector<json>> by_cell;
    std::map<std::size_t, json> axes;
    for (const auto& r : rows) {
      by_cell[r.at("cell").get<std::size_t>()].push_back(r);
      axes[r.at("cell").get<std::size_t>()] = r.at("axes");
    }
    json cells = json::array();
    std::ostringstream csv;
    csv << "cell,axes";
    for (const auto& m : kMetricNames) csv << ',' << m << "_mean," << m << "_std";
    csv << '\n';
    for (const auto& [c, rs] : by_cell) {
      auto agg = aggregate(rs);
      cells.push_back({{"cell", c}, {"axes", axes[c]}, {"seeds", rs.size()}, {"metrics", agg}});
      std::string ax = axes[c].dump();
      std::replace(ax.begin(), ax.end(), ',', ';');
      csv << c << ',' << ax;
      for (const auto& m : kMetricNames) {
        const auto& s = agg.at(m);
        csv << ',' << (s.at("mean").is_null() ? "nan" : fmt(s.at("mean").get<double>())) << ','
            << (s.at("std").is_null() ? "nan" : fmt(s.at("std").get<double>()));
      }
      csv << '\n';
    }
    write_json(run_dir / "aggregate.json", {{"cells", cells}});
    write_text(run_dir / "aggregate.csv", csv.str());
    written.push_back(run_dir / "aggregate.json");
    written.push_back(run_dir / "aggregate.csv");

    // One marginal per axis: average over seeds and all other axes.
    std::set<std::string> axis_names;
    for (const auto& [c, a] : axes) {
      for (auto it = a.begin(); it != a.end(); ++it) axis_names.insert(it.key());
    }
    for (const auto& axis : axis_names) {
      std::map<std::string, std::vector<json>> groups;
      std::vector<std::string> order;
      for (const auto& r : rows) {
        const auto key = r.at("axes").at(axis).dump();
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(r);
      }
      std::ostringstream dat;
      dat << "# " << axis;
      for (const auto& m : kMetricNames) dat << ' ' << m << "_mean " << m << "_std";
      dat << '\n';
      for (const auto& key : order) {
        auto agg = aggregate(groups[key]);
        std::string label = key;
        std::replace(label.begin(), label.end(), ' ', '_');
        dat << label;
        for (const auto& m : kMetricNames) {
          const auto& s = agg.at(m);
          dat << ' ' << (s.at("mean").is_null() ? "nan" : fmt(s.at("mean").get<double>())) << ' '
              << (s.at("std").is_null() ? "nan" : fmt(s.at("std").get<double>()));
        }
        dat << '\n';
      }
      write_text(run_dir / (axis + ".dat"), dat.str());
      written.push_back(run_dir / (axis + ".dat"));
    }
  }
  if (fs::exists(run_dir / "report.json")) {
    const auto report = json::parse(read_text(run_dir / "report.json"));
    std::vector<json> rows(report.at("per_seed").begin(), report.at("per_seed").end());
    write_json(run_dir / "run_aggregate.json", {{"name", report.at("name")}, {"metrics", aggregate(rows)}});
    written.push_back(run_dir / "run_aggregate.json");
  }
  if (written.empty()) throw IoError(run_dir.string() + ": no sweep.json or report.json to aggregate");
  return written;
}

std::string read_report_hash(const fs::path& run_dir) {
  const auto m = json::parse(read_text(run_dir / "manifest.json"));
  return m.at("report_hash").get<std::string>();
}

}  // namespace equireg
