// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria. `--only A5,A8` runs a subset; `--work DIR` holds the CLI
// run directories used by A12.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "equireg/autodiff.hpp"
#include "equireg/error.hpp"
#include "equireg/harness.hpp"
#include "equireg/serialize.hpp"

using namespace equireg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

std::size_t worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Mean of a metric over the seeds of every sweep cell, keyed by cell index.
std::map<std::size_t, double> cell_means(const std::vector<SweepRow>& rows,
                                         const std::function<double(const CellResult&)>& metric) {
  std::map<std::size_t, std::vector<double>> acc;
  for (const auto& r : rows) acc[r.cell].push_back(metric(r.result));
  std::map<std::size_t, double> out;
  for (const auto& [c, v] : acc) out[c] = mean_of(v);
  return out;
}

double psnr_of(const CellResult& r) { return r.metrics.psnr; }

GMMPrior random_prior(std::size_t d, std::size_t k, Rng& rng) {
  GMMPrior p;
  for (std::size_t i = 0; i < k; ++i) {
    p.weights.push_back(1.0 / static_cast<double>(k));
    Eigen::VectorXd m(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < m.size(); ++j) m(j) = rng.normal();
    Eigen::MatrixXd b(m.size(), m.size());
    for (Eigen::Index j = 0; j < b.size(); ++j) b.data()[j] = 0.2 * rng.normal();
    p.means.push_back(m);
    p.covariances.push_back(b * b.transpose() / static_cast<double>(d) + 0.3 * Eigen::MatrixXd::Identity(m.size(), m.size()));
  }
  return p;
}

std::shared_ptr<Autoencoder> untrained_ae(const Shape& shape, std::size_t latent, std::uint64_t seed) {
  AutoencoderConfig c;
  c.latent = latent;
  c.hidden = 8;
  c.steps = 0;
  c.seed = seed;
  Rng rng(seed + 100);
  std::vector<Tensor> data;
  for (int i = 0; i < 16; ++i) data.push_back(rng.normal_tensor(shape));
  return train_autoencoder_augmented(data, GroupAction::from_config({{"group", "flip-h"}}, shape), c);
}

// ---------------------------------------------------------------------------

Outcome a1_gradients() {
  const double eps = 1e-6, tol = 1e-4;
  const Shape img{4, 4};
  auto sched = make_linear_schedule(100, 1e-4, 0.05);
  std::map<std::string, double> worst;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    AnalyticGmmScore model(random_prior(16, 3, rng), sched, img);
    auto op = MeasurementOperator::make({{"kind", "gaussian-blur"}, {"kernel", 3}, {"sigma", 1.0}, {"sigma_y", 0.05}}, img);
    const Tensor y = op.apply(rng.normal_tensor(img));
    const int t = 10 + static_cast<int>(rng.index(80));
    auto ae = untrained_ae(img, 4, seed);
    auto equi = MPEFunction::from_autoencoder(ae, MpeRole::autoencoder, {{"group", "flip-h"}});
    auto equicon = MPEFunction::from_autoencoder(
        ae, MpeRole::decoder,
        {{"group", "permutation"}, {"perms", {{3, 2, 1, 0}}}, {"codomain", {{"group", "flip-h"}}}});
    const Tensor x = rng.normal_tensor(img), z = rng.normal_tensor({4});
    auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& at) {
      worst[name] = std::max(worst[name], check_gradient(f, at, eps));
    };

    check("measurement", [&](const Tensor& v) { return sq_norm(sub(y, op.apply(tweedie_x0(v, t, model)))); }, x);
    for (auto norm : {LossNorm::squared_l2, LossNorm::l2}) {
      check("equi", [&](const Tensor& v) { return equi_loss_at(equi, tweedie_x0(v, t, model), 1, norm); }, x);
      check("equicon", [&](const Tensor& v) { return equicon_loss_at(equicon, v, 1, norm); }, z);
    }
    SamplerConfig psld;
    psld.algorithm = Algorithm::psld;
    psld.gamma_psld = 0.3;
    check("psld-gluing", [&](const Tensor& v) { return psld_objective(*ae, op, y, v, psld).total; }, z);
    check("sitcom-measurement",
          [&](const Tensor& v) { return sitcom_measurement_objective(model, op, y, x, v, t, 0.2); },
          rng.normal_tensor(img));
    check("sitcom-equi", [&](const Tensor& v) { return equi_loss_at(equi, v, 1, LossNorm::squared_l2); },
          rng.normal_tensor(img));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    pass = pass && err < tol;
    detail += name + "=" + num(err, 2) + " ";
  }
  return {pass, "max rel err " + detail + "(tol 1e-4, 10 seeds)"};
}

Outcome a2_exactness() {
  std::string detail;
  bool pass = true;

  // Group axioms on 1000 random triples per group.
  const std::vector<std::pair<json, Shape>> groups = {
      {{{"group", "flip-h"}}, {5, 6}},
      {{{"group", "flip-v"}}, {5, 6}},
      {{{"group", "rot90"}}, {6, 6}},
      {{{"group", "cyclic-translate"}, {"shift", 1}}, {5, 5}},
      {{{"group", "negation"}}, {7}},
      {{{"group", "permutation"}, {"perms", {{1, 2, 0, 3}, {0, 1, 3, 2}}}, {"signs", {{1, -1, 1, 1}, {1, 1, 1, -1}}}},
       {4}},
  };
  std::size_t violations = 0;
  Rng rng(2);
  for (const auto& [cfg, shape] : groups) {
    auto a = GroupAction::from_config(cfg, shape);
    const auto e = a.identity();
    for (int trial = 0; trial < 1000; ++trial) {
      const auto g = rng.index(a.size()), h = rng.index(a.size()), k = rng.index(a.size());
      const Tensor x = rng.normal_tensor(shape);
      auto same = [](const Tensor& p, const Tensor& q) {
        return std::equal(p.data().begin(), p.data().end(), q.data().begin(), q.data().end());
      };
      if (!same(a.apply_domain(e, x), x)) ++violations;
      if (!same(a.apply_domain(a.compose(g, h), x), a.apply_domain(h, a.apply_domain(g, x)))) ++violations;
      if (!same(a.apply_domain(a.inverse(g), a.apply_domain(g, x)), x)) ++violations;
      if (a.compose(a.compose(g, h), k) != a.compose(g, a.compose(h, k))) ++violations;
      if (a.compose(g, a.inverse(g)) != e || a.compose(e, g) != g) ++violations;
    }
  }
  pass = pass && violations == 0;
  detail += "group violations=" + std::to_string(violations) + "; ";

  // Adjoint identity <A x, y> = <x, A^T y>, relative to |A x| |y|.
  const Shape img{8, 8};
  const std::vector<json> ops = {
      {{"kind", "identity"}},
      {{"kind", "box-inpaint"}, {"size", 4}},
      {{"kind", "random-inpaint"}, {"keep_prob", 0.3}, {"mask_seed", 4}},
      {{"kind", "gaussian-blur"}, {"kernel", 5}, {"sigma", 1.2}},
      {{"kind", "motion-blur"}, {"kernel", 5}, {"angle", 30.0}, {"sigma", 0.5}},
      {{"kind", "downsample"}, {"factor", 2}},
  };
  double adj = 0.0;
  auto adjoint_err = [&](const MeasurementOperator& op, const Shape& in) {
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor x = rng.normal_tensor(in), y = rng.normal_tensor(op.output_shape());
      const Tensor ax = op.apply(x), aty = op.adjoint(y);
      double lhs = 0.0, rhs = 0.0, nax = 0.0, ny = 0.0;
      for (std::size_t i = 0; i < ax.numel(); ++i) lhs += ax[i] * y[i], nax += ax[i] * ax[i], ny += y[i] * y[i];
      for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * aty[i];
      adj = std::max(adj, std::abs(lhs - rhs) / (std::sqrt(nax * ny) + 1e-300));
    }
  };
  for (auto spec : ops) {
    spec["sigma_y"] = 0.05;
    adjoint_err(MeasurementOperator::make(spec, img), img);
  }
  adjoint_err(MeasurementOperator::make({{"kind", "coordinate-mask"}, {"keep", {0, 3, 5}}, {"sigma_y", 0.05}}, {7}), {7});
  pass = pass && adj <= 1e-10;
  detail += "adjoint=" + num(adj, 2) + "; ";

  // Schedule invariants against products recomputed here.
  double sch = 0.0;
  for (auto [steps, lo, hi] : {std::tuple{1000, 1e-4, 0.02}, std::tuple{200, 1e-4, 0.05}, std::tuple{37, 1e-3, 0.3}}) {
    auto s = make_linear_schedule(steps, lo, hi);
    double ab = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double beta = lo + (hi - lo) * (steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1));
      const double ab_prev = ab;
      ab *= 1.0 - beta;
      sch = std::max({sch, std::abs(s.beta(t) - beta), std::abs(s.alpha(t) - (1.0 - beta)),
                      std::abs(s.alpha_bar(t) - ab)});
      const double var = (1.0 - ab_prev) / (1.0 - ab) * beta;
      sch = std::max(sch, std::abs(s.sigma_tilde(t) * s.sigma_tilde(t) - var));
      auto st = ancestral_step(s, t, t - 1);
      sch = std::max({sch, std::abs(st.coef_x0 - std::sqrt(ab_prev) * beta / (1.0 - ab)),
                      std::abs(st.coef_xt - std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab))});
      if (t > 1 && !(s.alpha_bar(t) < s.alpha_bar(t - 1))) sch = 1.0;
    }
    for (int n : {1, 7, steps}) {
      auto tau = step_subsequence(steps, n);
      if (static_cast<int>(tau.size()) != n || tau.back() != steps) sch = 1.0;
      for (int i = 1; i <= n; ++i) {
        if (tau[i - 1] != static_cast<int>((static_cast<long>(i) * steps + n - 1) / n)) sch = 1.0;
      }
    }
  }
  pass = pass && sch <= 1e-12;
  detail += "schedule=" + num(sch, 2) + "; ";

  // Tweedie of a single Gaussian against its closed form at every t.
  GMMPrior g = random_prior(6, 1, rng);
  auto sched = make_linear_schedule(1000, 1e-4, 0.02);
  AnalyticGmmScore model(g, sched);
  const Eigen::VectorXd mu = g.means[0];
  const Eigen::MatrixXd cov = g.covariances[0];
  double tw = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    const double ab = sched.alpha_bar(t);
    Eigen::VectorXd xt(6);
    for (Eigen::Index i = 0; i < 6; ++i) xt(i) = rng.normal();
    const Eigen::MatrixXd cov_t = ab * cov + (1.0 - ab) * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::VectorXd expect = mu + std::sqrt(ab) * cov * cov_t.ldlt().solve(xt - std::sqrt(ab) * mu);
    const Tensor got = tweedie_x0(Tensor({6}, std::vector<double>(xt.data(), xt.data() + 6)), t, model);
    for (Eigen::Index i = 0; i < 6; ++i) tw = std::max(tw, std::abs(got[static_cast<std::size_t>(i)] - expect(i)));
  }
  pass = pass && tw <= 1e-6;
  detail += "tweedie=" + num(tw, 2);
  return {pass, detail};
}

Outcome a3_mpe_emergence() {
  json train_spec = {{"kind", "sym-shapes-grid"}, {"n", 4000}, {"seed", 11}, {"size", 16}};
  json test_spec = {{"kind", "sym-shapes-grid"}, {"n", 500}, {"seed", 12}, {"size", 16}};
  auto train = generate_dataset(train_spec), test = generate_dataset(test_spec);
  AutoencoderConfig c;
  c.activation = "relu";
  c.hidden = 256;
  c.hidden_layers = 2;
  c.latent = 48;
  c.steps = 6000;
  c.lr = 1e-3;
  c.seed = 3;
  const json group = {{"group", "flip-h"}};
  auto ae = train_autoencoder_augmented(train.items, GroupAction::from_config(group, train.item_shape()), c);
  auto m = MPEFunction::from_autoencoder(ae, MpeRole::autoencoder, group);
  Rng rng(13);
  auto rows = mpe_sweep(m, test.items, {0.0, 0.1, 0.2, 0.4}, rng);
  bool increasing = true;
  std::string detail = "mean equi_error";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail += " " + num(rows[i].mean);
    if (i > 0 && !(rows[i].mean > rows[i - 1].mean)) increasing = false;
  }
  const double ratio = rows[0].mean / rows[2].mean;
  detail += "; clean/0.2 ratio " + num(ratio) + " (<= 0.8); holdout mse/var " + num(ae->holdout_mse / ae->data_variance);
  return {increasing && ratio <= 0.8, detail};
}

Outcome a4_unconditional() {
  GMMPrior p;
  p.weights = {0.3, 0.5, 0.2};
  p.means = {Eigen::Vector2d(-2.0, 0.0), Eigen::Vector2d(1.5, 1.0), Eigen::Vector2d(0.5, -2.0)};
  Eigen::Matrix2d c1, c2, c3;
  c1 << 0.3, 0.1, 0.1, 0.2;
  c2 << 0.2, -0.05, -0.05, 0.4;
  c3 << 0.1, 0.0, 0.0, 0.1;
  p.covariances = {c1, c2, c3};
  auto sched = make_linear_schedule(1000, 1e-4, 0.02);
  AnalyticGmmScore model(p, sched);
  const std::size_t n = 5000;
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor batch = ancestral_sample_batch(model, 1000, n, seed);
    Eigen::MatrixXd gen = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        batch.data().data(), static_cast<Eigen::Index>(n), 2);
    Rng orng(900 + seed);
    Eigen::MatrixXd ref = sample_gmm_matrix(p, n, orng), ref2 = sample_gmm_matrix(p, n, orng);
    Rng proj(700 + seed);
    const double sw = sliced_wasserstein(gen, ref, 256, proj);
    Rng proj2(700 + seed);
    const double base = sliced_wasserstein(ref2, ref, 256, proj2);
    pass = pass && sw <= 3.0 * base;
    detail += "seed" + std::to_string(seed) + " " + num(sw, 3) + "/" + num(base, 3) + " ";
  }
  return {pass, "sw2 model/oracle-baseline " + detail + "(ratio <= 3)"};
}

json ring_config() {
  auto cfg = json::parse(read_text(fs::path(EQUIREG_SOURCE_DIR) / "configs" / "ring_gmm_dps.json"));
  cfg["seeds"] = json::array();
  for (int s = 0; s < 10; ++s) cfg["seeds"].push_back(s);
  cfg["sweep"] = {{"algorithm", {"dps", "equi-dps"}}};
  return cfg;
}

Outcome a5_posterior() {
  auto p = prepare_in_memory(ExperimentConfig::from_json(ring_config()));
  auto rows = run_sweep(p, worker_threads());
  auto sw = cell_means(rows, [](const CellResult& r) { return r.metrics.sw2; });
  auto dist = cell_means(rows, [](const CellResult& r) { return r.metrics.extra.at("dist_manifold"); });
  auto ref = cell_means(rows, [](const CellResult& r) { return r.metrics.extra.at("dist_manifold_oracle"); });
  const bool pass = sw[1] <= sw[0] && dist[1] < dist[0];
  return {pass, "sw2 dps " + num(sw[0], 5) + " equi " + num(sw[1], 5) + "; dist_manifold dps " + num(dist[0], 6) +
                    " equi " + num(dist[1], 6) + " (exact posterior " + num(ref[0], 6) + ")"};
}

// 16x16 mirrored template mixture with an exact score; the MPE is a
// flip-augmented autoencoder used as D(E(x)).
json image_config() {
  return {{"name", "toy-images"},
          {"dataset",
           {{"kind", "template-gmm"},
            {"n", 2000},
            {"seed", 1},
            {"params", {{"size", 16}, {"components", 8}, {"noise", 0.05}, {"brightness", 0.2}}}}},
          {"test", {{"n", 10}, {"seed", 7}}},
          {"schedule", {{"steps", 1000}, {"beta_min", 1e-4}, {"beta_max", 0.02}}},
          {"autoencoder",
           {{"latent", 16}, {"hidden", 128}, {"activation", "tanh"}, {"steps", 1500}, {"lr", 1e-3}, {"seed", 1},
            {"group", {{"group", "flip-h"}}}}},
          {"mpe", {{"role", "autoencoder"}}},
          {"operator", {{"kind", "downsample"}, {"factor", 2}, {"sigma_y", 0.05}}},
          {"sampler", {{"algorithm", "equi-dps"}, {"steps", 100}, {"zeta", 1.0}, {"equi", {{"lambda", 0.1}, {"norm", "l2"}}}}},
          {"samples_per_image", 1},
          {"seeds", {0, 1, 2}},
          {"out", "unused"},
          {"metrics", {{"oracle_samples", 200}}}};
}

std::vector<SweepRow> run_image_sweep(json cfg) {
  auto p = prepare_in_memory(ExperimentConfig::from_json(cfg));
  return run_sweep(p, worker_threads());
}

Outcome a6_lambda_plateau() {
  auto cfg = image_config();
  cfg["sweep"] = {{"lambda", {0.0, 0.001, 0.01, 0.1, 1.0}}};
  auto ps = cell_means(run_image_sweep(cfg), psnr_of);
  double lo = ps[1], hi = ps[1];
  bool above = true;
  std::string detail = "psnr";
  for (std::size_t c = 0; c < 5; ++c) detail += " " + num(ps[c], 6);
  for (std::size_t c = 1; c < 5; ++c) {
    lo = std::min(lo, ps[c]);
    hi = std::max(hi, ps[c]);
    above = above && ps[c] >= ps[0] - 0.2;
  }
  return {hi - lo <= 1.0 && above, detail + "; spread " + num(hi - lo, 3) + " dB (<= 1)"};
}

Outcome a7_period() {
  auto cfg = image_config();
  cfg["sweep"] = {{"period", {1, 2, 5, 10}}};
  auto rows = run_image_sweep(cfg);
  auto ps = cell_means(rows, psnr_of);
  const std::array<std::size_t, 4> periods{1, 2, 5, 10};
  // 100 steps with the final 10 unregularised: steps 0..89 are eligible.
  const std::size_t chains = 10;
  bool counts = true;
  std::string detail = "psnr";
  double lo = ps[0], hi = ps[0];
  for (std::size_t c = 0; c < 4; ++c) {
    lo = std::min(lo, ps[c]);
    hi = std::max(hi, ps[c]);
    detail += " " + num(ps[c], 6);
  }
  detail += "; reg_grads";
  for (const auto& r : rows) {
    const std::size_t p = periods[r.cell];
    counts = counts && r.result.counters.reg_grads == chains * 90 / p;
    if (r.seed == 0) detail += " " + std::to_string(r.result.counters.reg_grads);
  }
  return {hi - lo <= 0.5 && counts, detail + "; spread " + num(hi - lo, 3) + " dB (<= 0.5)"};
}

Outcome a8_reduced_steps() {
  auto cfg = image_config();
  cfg["test"]["n"] = 20;
  cfg["operator"] = {{"kind", "box-inpaint"}, {"size", 8}, {"sigma_y", 0.05}};
  cfg["sweep"] = {{"algorithm", {"dps", "equi-dps"}}, {"steps", {100, 250, 1000}}};
  auto ps = cell_means(run_image_sweep(cfg), psnr_of);
  bool pass = true;
  std::string detail;
  std::array<double, 3> gap{};
  const std::array<int, 3> steps{100, 250, 1000};
  for (std::size_t i = 0; i < 3; ++i) {
    gap[i] = ps[3 + i] - ps[i];
    pass = pass && gap[i] >= 0.0;
    detail += "steps " + std::to_string(steps[i]) + " dps " + num(ps[i], 7) + " equi " + num(ps[3 + i], 7) + "; ";
  }
  pass = pass && gap[0] >= gap[2];
  return {pass, detail + "gap@100 " + num(gap[0], 3) + " vs gap@1000 " + num(gap[2], 3)};
}

Outcome a9_reductions() {
  auto sched = make_linear_schedule(200, 1e-4, 0.05);
  Rng rng(21);
  auto pixel = std::make_shared<AnalyticGmmScore>(random_prior(4, 2, rng), sched);
  auto latent = std::make_shared<AnalyticGmmScore>(random_prior(2, 2, rng), sched);
  auto ae = untrained_ae({4}, 2, 4);
  auto op = MeasurementOperator::make({{"kind", "coordinate-mask"}, {"keep", {0, 1}}, {"sigma_y", 0.05}}, {4});
  auto enc = MPEFunction::from_autoencoder(
      ae, MpeRole::encoder,
      {{"group", "permutation"}, {"perms", {{3, 2, 1, 0}}}, {"codomain", {{"group", "permutation"}, {"perms", {{1, 0}}}}}});
  auto dec = MPEFunction::from_autoencoder(
      ae, MpeRole::decoder,
      {{"group", "permutation"}, {"perms", {{1, 0}}}, {"codomain", {{"group", "permutation"}, {"perms", {{3, 2, 1, 0}}}}}});
  const std::vector<std::pair<Algorithm, Algorithm>> pairs = {
      {Algorithm::equi_dps, Algorithm::dps},           {Algorithm::equi_psld, Algorithm::psld},
      {Algorithm::equicon_psld, Algorithm::psld},      {Algorithm::equi_resample, Algorithm::resample},
      {Algorithm::equicon_resample, Algorithm::resample}, {Algorithm::equi_sitcom, Algorithm::sitcom}};
  auto identical = [](const Trajectory& a, const Trajectory& b) {
    if (a.records.size() != b.records.size()) return false;
    auto same = [](const Tensor& p, const Tensor& q) {
      return std::equal(p.data().begin(), p.data().end(), q.data().begin(), q.data().end());
    };
    if (!same(a.sample, b.sample)) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      if (!same(a.records[i].state, b.records[i].state)) return false;
    }
    return true;
  };
  std::size_t checked = 0, bad = 0;
  std::string failures;
  for (const auto& [reg, base] : pairs) {
    for (std::uint64_t seed : {3u, 4u}) {
      SamplerInputs in;
      in.op = &op;
      in.y = Tensor::vector({0.7, -0.3});
      const bool lat = is_latent(reg);
      in.model = lat ? latent.get() : pixel.get();
      in.ae = ae.get();
      in.mpe = lat ? &dec : &enc;
      SamplerConfig b;
      b.algorithm = base;
      b.steps = 20;
      b.seed = seed;
      b.zeta = 0.5;
      b.k_meas = 4;
      b.inner_lr = 0.05;
      if (base == Algorithm::resample) b.resample_steps = std::vector<std::size_t>{4, 9, 14};
      SamplerConfig r = b;
      r.algorithm = reg;
      r.equi.lambda = 0.0;
      r.k_equi = reg == Algorithm::equi_sitcom ? 3 : 0;
      SamplerInputs base_in = in;
      base_in.mpe = nullptr;
      const auto want = run_sampler(b, base_in);
      ++checked;
      if (!identical(run_sampler(r, in), want)) ++bad, failures += std::string(algorithm_name(reg)) + " lambda=0; ";
      if (reg == Algorithm::equi_sitcom) {
        r.equi.lambda = 0.5;
        r.k_equi = 0;
        ++checked;
        if (!identical(run_sampler(r, in), want)) ++bad, failures += "equi-sitcom K_equi=0; ";
      }
    }
  }
  return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) + " reductions bit-identical " + failures};
}

double spearman(const std::vector<double>& v) {
  // Rank correlation against 1..n; ties get the mean rank.
  const std::size_t n = v.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) less += v[j] < v[i], equal += v[j] == v[i];
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double sxy = 0, sxx = 0, syy = 0;
  const double m = (static_cast<double>(n) + 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = static_cast<double>(i + 1) - m, b = rank[i] - m;
    sxy += a * b, sxx += a * a, syy += b * b;
  }
  return sxy / std::sqrt(sxx * syy);
}

Outcome a10_diversity() {
  auto cfg = image_config();
  cfg["samples_per_image"] = 10;
  cfg["seeds"] = {0};
  cfg["operator"] = {{"kind", "box-inpaint"}, {"size", 4}, {"sigma_y", 0.05}};
  cfg["sweep"] = {{"mask_size", {4, 8, 12}}};
  auto rows = run_image_sweep(cfg);
  auto intra = cell_means(rows, [](const CellResult& r) { return r.metrics.intra_dist; });
  auto pstd = cell_means(rows, [](const CellResult& r) { return r.metrics.pixel_std; });
  std::vector<double> a{intra[0], intra[1], intra[2]}, b{pstd[0], pstd[1], pstd[2]};
  const double ra = spearman(a), rb = spearman(b);
  return {ra == 1.0 && rb == 1.0, "intra_dist " + num(a[0]) + " " + num(a[1]) + " " + num(a[2]) + " (rho " + num(ra) +
                                      "); pixel_std " + num(b[0]) + " " + num(b[1]) + " " + num(b[2]) + " (rho " +
                                      num(rb) + ")"};
}

Outcome a11_sitcom_split() {
  auto cfg = image_config();
  cfg["test"]["n"] = 20;
  cfg["operator"] = {{"kind", "box-inpaint"}, {"size", 8}, {"sigma_y", 0.05}};
  // Stop the measurement stage at the noise level: delta = sigma_y sqrt(#observed).
  const double delta = 0.05 * std::sqrt(256.0 - 64.0);
  cfg["sampler"] = {{"algorithm", "equi-sitcom"}, {"steps", 20}, {"inner_lr", 0.1}, {"delta", delta},
                    {"equi", {{"lambda", 0.1}, {"norm", "l2"}}}};
  cfg["sweep"] = {{"k_split", {{10, 0}, {5, 5}}}};
  auto rows = run_image_sweep(cfg);
  auto ps = cell_means(rows, psnr_of);
  std::size_t inner = 0;
  for (const auto& r : rows) inner += r.cell == 1 ? r.result.counters.inner_equi : 0;
  return {ps[1] >= ps[0] - 0.5, "psnr (10,0) " + num(ps[0], 6) + " (5,5) " + num(ps[1], 6) + " (>= -0.5 dB); equi inner steps " +
                                    std::to_string(inner)};
}

#ifdef EQUIREG_CLI_PATH
std::string run_cli(const std::string& args) {
  const std::string cmd = std::string(EQUIREG_CLI_PATH) + " " + args + " 2>&1";
  std::string out;
  if (FILE* pipe = popen(cmd.c_str(), "r")) {
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    if (pclose(pipe) != 0) throw IoError("command failed: " + cmd + "\n" + out);
  }
  return out;
}

Outcome a12_determinism(const fs::path& work) {
  const fs::path dir = work / "a12";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = ring_config();
  cfg["test"]["n"] = 2;
  cfg["samples_per_image"] = 4;
  cfg["sampler"]["steps"] = 30;
  cfg["sweep"] = json::object();
  cfg["autoencoder"]["steps"] = 200;
  cfg["out"] = (dir / "run").string();
  write_text(dir / "config.json", cfg.dump(2));
  const std::string conf = "--config " + (dir / "config.json").string();
  auto hash_of = [](const std::string& out) {
    const auto pos = out.find("report_hash ");
    return pos == std::string::npos ? std::string() : out.substr(pos + 12, out.find('\n', pos) - pos - 12);
  };
  run_cli("gen-data " + conf);
  run_cli("train " + conf);
  const auto first = hash_of(run_cli("run " + conf + " --seeds 0,1,2 --threads 2"));
  const auto second = hash_of(run_cli("run " + conf + " --seeds 0,1,2 --threads 1"));
  return {!first.empty() && first == second, "report_hash via CLI " + first + " vs " + second};
}
#else
Outcome a12_determinism(const fs::path& work) {
  // Built without the CLI: drive the same verbs in-process.
  const fs::path dir = work / "a12";
  fs::remove_all(dir);
  auto j = ring_config();
  j["test"]["n"] = 2;
  j["samples_per_image"] = 4;
  j["sampler"]["steps"] = 30;
  j["sweep"] = json::object();
  j["autoencoder"]["steps"] = 200;
  j["out"] = (dir / "run").string();
  j["seeds"] = {0, 1, 2};
  auto cfg = ExperimentConfig::from_json(j);
  cmd_gen_data(cfg);
  cmd_train(cfg);
  cmd_run(cfg, 2);
  const auto first = read_report_hash(cfg.out);
  cmd_run(cfg, 1);
  const auto second = read_report_hash(cfg.out);
  return {first == second, "report_hash " + first + " vs " + second};
}
#endif

Outcome a13_free_energy() {
  // Overdamped Langevin dx = -V'(x) dt + dW, whose stationary law exp(-2V)
  // minimises E[V] + 0.5 E[log rho].
  auto v = [](double x) { return (x * x - 1.0) * (x * x - 1.0); };
  auto dv = [](double x) { return 4.0 * x * (x * x - 1.0); };
  const std::size_t n = 2000;
  Rng rng(31);
  Eigen::MatrixXd x(n, 1);
  for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), 0) = 2.0 + 0.3 * rng.normal();
  const double dt = 1e-3;
  std::vector<double> f;
  for (int checkpoint = 0; checkpoint < 10; ++checkpoint) {
    f.push_back(free_energy_estimate(x, [&](const Eigen::VectorXd& p) { return v(p(0)); }).value);
    for (int step = 0; step < 300; ++step) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) += -dv(x(i, 0)) * dt + std::sqrt(dt) * rng.normal();
    }
  }
  bool pass = true;
  std::string detail = "F";
  for (std::size_t i = 0; i < f.size(); ++i) {
    detail += " " + num(f[i]);
    if (i > 0 && f[i] > f[i - 1] + 0.1) pass = false;
  }
  return {pass, detail + " (non-increasing within 0.1)"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "equireg_acceptance";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream in(argv[++i]);
      std::string tok;
      while (std::getline(in, tok, ',')) only.insert(tok);
    } else {
      std::cerr << "usage: equireg_acceptance [--work DIR] [--only A1,A2,...]\n";
      return 64;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", a1_gradients},      {"A2", a2_exactness},     {"A3", a3_mpe_emergence},
      {"A4", a4_unconditional},  {"A5", a5_posterior},     {"A6", a6_lambda_plateau},
      {"A7", a7_period},         {"A8", a8_reduced_steps}, {"A9", a9_reductions},
      {"A10", a10_diversity},    {"A11", a11_sitcom_split}, {"A12", [&] { return a12_determinism(work); }},
      {"A13", a13_free_energy}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += o.pass ? 0 : 1;
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << num(secs, 3) << " s]"
              << std::endl;
  }
  return failed;
}
