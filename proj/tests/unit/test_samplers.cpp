#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "equireg/autodiff.hpp"
#include "equireg/samplers.hpp"

using namespace equireg;

namespace {

GMMPrior two_blobs(std::size_t d) {
  GMMPrior p;
  p.weights = {0.5, 0.5};
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  m(0) = 1.5;
  m(d - 1) = -0.5;
  p.means = {m, -m};
  p.covariances = {0.2 * Eigen::MatrixXd::Identity(d, d), 0.3 * Eigen::MatrixXd::Identity(d, d)};
  return p;
}

struct World {
  NoiseSchedule sched = make_linear_schedule(200, 1e-4, 0.05);
  std::shared_ptr<AnalyticGmmScore> pixel_model;
  std::shared_ptr<AnalyticGmmScore> latent_model;
  std::shared_ptr<Autoencoder> ae;
  MeasurementOperator op;
  Tensor y_pixel;
  MPEFunction mpe_encoder;
  MPEFunction mpe_decoder;

  World()
      : pixel_model(std::make_shared<AnalyticGmmScore>(two_blobs(4), sched)),
        latent_model(std::make_shared<AnalyticGmmScore>(two_blobs(2), sched)),
        ae(make_ae()),
        op(MeasurementOperator::make({{"kind", "coordinate-mask"}, {"keep", {0, 1}}, {"sigma_y", 0.05}}, {4})),
        y_pixel(Tensor::vector({0.9, -0.2})),
        mpe_encoder(MPEFunction::from_autoencoder(
            ae, MpeRole::encoder,
            {{"group", "permutation"},
             {"perms", {{3, 2, 1, 0}}},
             {"codomain", {{"group", "permutation"}, {"perms", {{1, 0}}}}}})),
        mpe_decoder(MPEFunction::from_autoencoder(
            ae, MpeRole::decoder,
            {{"group", "permutation"},
             {"perms", {{1, 0}}},
             {"codomain", {{"group", "permutation"}, {"perms", {{3, 2, 1, 0}}}}}})) {}

  static std::shared_ptr<Autoencoder> make_ae() {
    AutoencoderConfig c;
    c.latent = 2;
    c.hidden = 8;
    c.steps = 0;
    c.seed = 5;
    std::vector<Tensor> data;
    Rng rng(3);
    for (int i = 0; i < 20; ++i) data.push_back(rng.normal_tensor({4}));
    return train_autoencoder_augmented(data, GroupAction::from_config({{"group", "permutation"}, {"perms", {{3, 2, 1, 0}}}}, {4}), c);
  }

  SamplerInputs inputs(Algorithm a, bool with_mpe = true) const {
    SamplerInputs in;
    in.op = &op;
    in.y = y_pixel;
    if (is_latent(a)) {
      in.model = latent_model.get();
      in.ae = ae.get();
      if (with_mpe) in.mpe = &mpe_decoder;
    } else {
      in.model = pixel_model.get();
      if (with_mpe) in.mpe = &mpe_encoder;
    }
    return in;
  }
};

const World& world() {
  static World w;
  return w;
}

SamplerConfig base_config(Algorithm a, std::uint64_t seed = 7) {
  SamplerConfig c;
  c.algorithm = a;
  c.steps = 20;
  c.seed = seed;
  c.zeta = 0.3;
  c.k_meas = 4;
  c.inner_lr = 0.05;
  c.equi.lambda = 0.1;
  return c;
}

void expect_bit_identical(const Trajectory& a, const Trajectory& b) {
  ASSERT_EQ(a.sample.numel(), b.sample.numel());
  for (std::size_t i = 0; i < a.sample.numel(); ++i) ASSERT_EQ(a.sample.data()[i], b.sample.data()[i]) << i;
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    ASSERT_EQ(a.records[k].measurement_loss, b.records[k].measurement_loss) << "step " << k;
    const auto& sa = a.records[k].state.data();
    const auto& sb = b.records[k].state.data();
    for (std::size_t i = 0; i < sa.size(); ++i) ASSERT_EQ(sa[i], sb[i]) << "step " << k;
  }
}

void expect_finite(const Trajectory& t) {
  for (double v : t.sample.data()) ASSERT_TRUE(std::isfinite(v));
  for (const auto& r : t.records) {
    for (double v : r.state.data()) ASSERT_TRUE(std::isfinite(v));
    for (double v : r.x0.data()) ASSERT_TRUE(std::isfinite(v));
    ASSERT_TRUE(std::isfinite(r.measurement_loss));
  }
}

const Algorithm kRegularized[] = {Algorithm::equi_dps,      Algorithm::equi_psld,        Algorithm::equicon_psld,
                                  Algorithm::equi_resample, Algorithm::equicon_resample, Algorithm::equi_sitcom};

}  // namespace

TEST(Ancestral, MomentsMatchGaussianPrior) {
  GMMPrior p;
  p.weights = {1.0};
  Eigen::Vector2d mu(1.0, -0.5);
  Eigen::Matrix2d cov;
  cov << 1.0, 0.3, 0.3, 0.5;
  p.means = {mu};
  p.covariances = {cov};
  AnalyticGmmScore model(p, make_linear_schedule(1000, 1e-4, 0.02));
  Tensor xs = ancestral_sample_batch(model, 1000, 5000, 11);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>> m(xs.data().data(), 5000, 2);
  const Eigen::RowVector2d mean = m.colwise().mean();
  const Eigen::MatrixXd centred = m.rowwise() - mean;
  const Eigen::Matrix2d sample_cov = centred.transpose() * centred / 4999.0;
  EXPECT_LT((mean.transpose() - mu).norm(), 0.05 * mu.norm());
  EXPECT_LT((sample_cov - cov).norm(), 0.05 * cov.norm());
}

TEST(Ancestral, SingleChainMatchesBatchOfOne) {
  const auto& w = world();
  SamplerConfig c;
  c.steps = 20;
  c.seed = 4;
  auto traj = ancestral_sample(*w.pixel_model, c);
  Tensor batch = ancestral_sample_batch(*w.pixel_model, 20, 1, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(traj.sample.data()[i], batch.data()[i]);
}

TEST(Ancestral, FixedSeedIsBitIdentical) {
  const auto& w = world();
  SamplerConfig c;
  c.steps = 50;
  c.seed = 9;
  expect_bit_identical(ancestral_sample(*w.pixel_model, c), ancestral_sample(*w.pixel_model, c));
  c.seed = 10;
  auto other = ancestral_sample(*w.pixel_model, c);
  EXPECT_NE(other.sample.data()[0], ancestral_sample(*w.pixel_model, SamplerConfig{.steps = 50, .seed = 9}).sample.data()[0]);
}

TEST(Ancestral, SingleStepChainIsFinite) {
  AnalyticGmmScore model(two_blobs(3), make_linear_schedule(1, 0.5, 0.5));
  SamplerConfig c;
  c.steps = 1;
  auto traj = ancestral_sample(model, c);
  ASSERT_EQ(traj.records.size(), 1u);
  EXPECT_EQ(traj.records[0].t, 1);
  EXPECT_EQ(traj.records[0].s, 0);
  expect_finite(traj);
  EXPECT_EQ(traj.counters.score_evals, 1u);
}

TEST(Samplers, StepsFollowEvenSubsequence) {
  const auto& w = world();
  auto c = base_config(Algorithm::dps);
  c.steps = 7;
  auto traj = run_sampler(c, w.inputs(Algorithm::dps, false));
  const auto taus = step_subsequence(200, 7);
  ASSERT_EQ(traj.records.size(), 7u);
  for (std::size_t k = 0; k < 7; ++k) {
    EXPECT_EQ(traj.records[k].t, taus[6 - k]);
    EXPECT_EQ(traj.records[k].s, k == 6 ? 0 : taus[5 - k]);
  }
  c.steps = 200;
  traj = run_sampler(c, w.inputs(Algorithm::dps, false));
  for (std::size_t k = 0; k < 200; ++k) {
    EXPECT_EQ(traj.records[k].t, 200 - static_cast<int>(k));
    EXPECT_EQ(traj.records[k].s, 199 - static_cast<int>(k));
  }
}

TEST(Samplers, RejectsMoreStepsThanSchedule) {
  const auto& w = world();
  auto c = base_config(Algorithm::dps);
  c.steps = 201;
  EXPECT_THROW(run_sampler(c, w.inputs(Algorithm::dps, false)), ConfigError);
}

TEST(Samplers, EveryAlgorithmProducesFiniteTrajectories) {
  const auto& w = world();
  for (auto a : kRegularized) {
    for (auto alg : {a, baseline_of(a)}) {
      auto c = base_config(alg);
      c.k_equi = 3;
      auto traj = run_sampler(c, w.inputs(alg, is_regularized(alg)));
      EXPECT_EQ(traj.records.size(), 20u) << algorithm_name(alg);
      expect_finite(traj);
      EXPECT_EQ(traj.sample.shape(), Shape{4}) << algorithm_name(alg);
      if (is_latent(alg)) EXPECT_EQ(traj.latent.shape(), Shape{2});
    }
  }
}

TEST(Samplers, ZeroLambdaIsBitIdenticalToBaseline) {
  const auto& w = world();
  for (auto a : kRegularized) {
    for (std::uint64_t seed : {1u, 2u}) {
      auto c = base_config(a, seed);
      c.equi.lambda = 0.0;
      c.k_equi = 3;
      auto reg = run_sampler(c, w.inputs(a));
      auto cb = c;
      cb.algorithm = baseline_of(a);
      auto base = run_sampler(cb, w.inputs(cb.algorithm, false));
      SCOPED_TRACE(algorithm_name(a));
      expect_bit_identical(reg, base);
      EXPECT_EQ(reg.counters.reg_grads, 0u);
    }
  }
}

TEST(Samplers, ZeroEquiStepsIsBitIdenticalToSitcom) {
  const auto& w = world();
  auto c = base_config(Algorithm::equi_sitcom);
  c.equi.lambda = 0.5;
  c.k_equi = 0;
  auto reg = run_sampler(c, w.inputs(Algorithm::equi_sitcom));
  c.algorithm = Algorithm::sitcom;
  expect_bit_identical(reg, run_sampler(c, w.inputs(Algorithm::sitcom, false)));
}

TEST(Samplers, RegulariserChangesTheChain) {
  const auto& w = world();
  for (auto a : kRegularized) {
    auto c = base_config(a);
    c.equi.lambda = 1.0;
    c.k_equi = 3;
    auto reg = run_sampler(c, w.inputs(a));
    c.algorithm = baseline_of(a);
    auto base = run_sampler(c, w.inputs(c.algorithm, false));
    double diff = 0.0;
    for (std::size_t i = 0; i < 4; ++i) diff += std::abs(reg.sample.data()[i] - base.sample.data()[i]);
    EXPECT_GT(diff, 0.0) << algorithm_name(a);
    EXPECT_GT(reg.counters.reg_grads, 0u) << algorithm_name(a);
  }
}

TEST(Samplers, RegulariserCountFollowsPeriod) {
  const auto& w = world();
  for (std::size_t period : {1u, 2u, 5u, 10u}) {
    auto c = base_config(Algorithm::equi_dps);
    c.steps = 50;
    c.equi.period = period;
    auto traj = run_sampler(c, w.inputs(Algorithm::equi_dps));
    const std::size_t expected = (45 + period - 1) / period;
    EXPECT_EQ(traj.counters.reg_grads, expected) << period;
    for (std::size_t k = 0; k < 50; ++k) {
      const bool on = k < 45 && k % period == 0;
      EXPECT_EQ(traj.records[k].regularized, on) << k;
      EXPECT_EQ(std::isnan(traj.records[k].equi_loss), !on) << k;
    }
  }
}

TEST(Samplers, FinalTenPercentIsUnregularised) {
  const auto& w = world();
  for (auto a : kRegularized) {
    auto c = base_config(a);
    c.k_equi = 2;
    auto traj = run_sampler(c, w.inputs(a));
    for (std::size_t k = 18; k < 20; ++k) EXPECT_FALSE(traj.records[k].regularized) << algorithm_name(a) << k;
    EXPECT_TRUE(traj.records[0].regularized) << algorithm_name(a);
  }
}

TEST(Samplers, DetachedModeReducesToBaselineAtZeroLambda) {
  const auto& w = world();
  auto c = base_config(Algorithm::equi_dps);
  c.detached = true;
  auto chained = run_sampler(c, w.inputs(Algorithm::equi_dps));
  expect_finite(chained);
  c.equi.lambda = 0.0;
  auto reg = run_sampler(c, w.inputs(Algorithm::equi_dps));
  c.algorithm = Algorithm::dps;
  expect_bit_identical(reg, run_sampler(c, w.inputs(Algorithm::dps, false)));
}

TEST(Samplers, ZeroGuidanceScaleIsAncestral) {
  const auto& w = world();
  auto c = base_config(Algorithm::dps);
  c.zeta = 0.0;
  auto dps = run_sampler(c, w.inputs(Algorithm::dps, false));
  c.algorithm = Algorithm::ancestral;
  auto anc = run_sampler(c, w.inputs(Algorithm::ancestral, false));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(dps.sample.data()[i], anc.sample.data()[i]);
}

TEST(Samplers, ConsistentMeasurementGivesZeroGuidance) {
  // With y = A(x0|t) the DPS correction vanishes, so the first step equals the
  // unguided ancestral step.
  const auto& w = world();
  auto ident = MeasurementOperator::make({{"kind", "identity"}}, {4});
  SamplerConfig c;
  c.algorithm = Algorithm::ancestral;
  c.steps = 20;
  c.seed = 3;
  auto anc = run_sampler(c, [&] {
    SamplerInputs in;
    in.model = w.pixel_model.get();
    return in;
  }());
  c.algorithm = Algorithm::dps;
  c.zeta = 5.0;
  SamplerInputs in;
  in.model = w.pixel_model.get();
  in.op = &ident;
  in.y = anc.records[0].x0;
  auto dps = run_sampler(c, in);
  EXPECT_EQ(dps.records[0].measurement_loss, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(dps.records[1].state.data()[i], anc.records[1].state.data()[i]);
}

TEST(Samplers, PsldRejectsNonlinearOperator) {
  const auto& w = world();
  auto sat = MeasurementOperator::make({{"kind", "saturate"}}, {4});
  auto in = w.inputs(Algorithm::equi_psld);
  in.op = &sat;
  in.y = Tensor::zeros({4});
  EXPECT_THROW(run_sampler(base_config(Algorithm::equi_psld), in), ConfigError);
}

TEST(Samplers, MissingInputsAreRejected) {
  const auto& w = world();
  EXPECT_THROW(run_sampler(base_config(Algorithm::equi_dps), w.inputs(Algorithm::equi_dps, false)), ConfigError);
  auto in = w.inputs(Algorithm::psld, false);
  in.ae = nullptr;
  EXPECT_THROW(run_sampler(base_config(Algorithm::psld), in), ConfigError);
  in = w.inputs(Algorithm::dps, false);
  in.y = Tensor::zeros({3});
  EXPECT_THROW(run_sampler(base_config(Algorithm::dps), in), ShapeError);
}

TEST(Samplers, NonFiniteGuidanceNamesTheStep) {
  const auto& w = world();
  auto c = base_config(Algorithm::dps);
  c.zeta = 1e300;
  try {
    run_sampler(c, w.inputs(Algorithm::dps, false));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(StochasticResample, InfiniteGammaReturnsProposal) {
  Rng rng(1);
  auto z0 = Tensor::vector({0.4, -1.0});
  auto zp = Tensor::vector({2.0, 3.0});
  auto out = stochastic_resample(z0, zp, 0.7, std::numeric_limits<double>::infinity(), rng);
  EXPECT_EQ(out.data()[0], 2.0);
  EXPECT_EQ(out.data()[1], 3.0);
  auto near = stochastic_resample(z0, zp, 0.7, 1e12, rng);
  EXPECT_NEAR(near.data()[0], 2.0, 1e-5);
  EXPECT_NEAR(near.data()[1], 3.0, 1e-5);
}

TEST(StochasticResample, MomentsMatchGaussianProduct) {
  // Independent oracle: the product of N(sqrt(ab) z0, s2) and N(z', s2^2 / gamma)
  // has precision 1/s2 + gamma/s2^2.
  const double ab = 0.6, s2 = 1.0 - ab;
  const double z0 = 0.8, zp = -0.3;
  for (double gamma : {0.0, 0.1, 2.0}) {
    const double prec = 1.0 / s2 + gamma / (s2 * s2);
    const double mean = (std::sqrt(ab) * z0 / s2 + zp * gamma / (s2 * s2)) / prec;
    const double var = 1.0 / prec;
    Rng rng(2);
    const int n = 40000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      double v = stochastic_resample(Tensor::vector({z0}), Tensor::vector({zp}), ab, gamma, rng).data()[0];
      sum += v;
      sum2 += v * v;
    }
    const double m = sum / n, v = sum2 / n - m * m;
    EXPECT_NEAR(m, mean, 4.0 * std::sqrt(var / n)) << gamma;
    EXPECT_NEAR(v, var, 0.03 * var) << gamma;
  }
}

TEST(Resample, EmptyResampleSetIsDdim) {
  const auto& w = world();
  auto c = base_config(Algorithm::resample);
  c.resample_steps = std::vector<std::size_t>{};
  auto rs = run_sampler(c, w.inputs(Algorithm::resample, false));
  c.algorithm = Algorithm::ddim;
  SamplerInputs in;
  in.model = w.latent_model.get();
  auto ddim = run_sampler(c, in);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(rs.latent.data()[i], ddim.sample.data()[i]);
  EXPECT_EQ(rs.counters.resampled, 0u);
}

TEST(Resample, InnerLoopRunsOnlyOnResampleSteps) {
  const auto& w = world();
  auto c = base_config(Algorithm::resample);
  c.resample_steps = std::vector<std::size_t>{2, 5, 19};
  auto rs = run_sampler(c, w.inputs(Algorithm::resample, false));
  EXPECT_EQ(rs.counters.resampled, 3u);
  for (std::size_t k = 0; k < 20; ++k) {
    const bool in_c = k == 2 || k == 5 || k == 19;
    EXPECT_EQ(rs.records[k].inner_meas, in_c ? 4 : 0) << k;
  }
}

TEST(Resample, DivergentInnerLoopAborts) {
  const auto& w = world();
  auto c = base_config(Algorithm::resample);
  c.inner_lr = 1e3;
  c.k_meas = 30;
  EXPECT_THROW(run_sampler(c, w.inputs(Algorithm::resample, false)), NumericError);
}

TEST(Sitcom, LargeDeltaSkipsMeasurementStage) {
  const auto& w = world();
  auto c = base_config(Algorithm::sitcom);
  c.delta = 1e6;
  auto traj = run_sampler(c, w.inputs(Algorithm::sitcom, false));
  for (const auto& r : traj.records) EXPECT_EQ(r.inner_meas, 0);
  EXPECT_EQ(traj.counters.inner_meas, 0u);
}

TEST(Sitcom, SplitArmKeepsTheInnerBudget) {
  const auto& w = world();
  auto c = base_config(Algorithm::equi_sitcom);
  c.k_meas = 5;
  c.k_equi = 5;
  auto split = run_sampler(c, w.inputs(Algorithm::equi_sitcom));
  EXPECT_EQ(split.counters.inner_meas, 5u * 20);
  EXPECT_EQ(split.counters.inner_equi, 5u * 18);
  c.k_meas = 10;
  c.k_equi = 0;
  auto full = run_sampler(c, w.inputs(Algorithm::equi_sitcom));
  EXPECT_EQ(full.counters.inner_meas, 10u * 20);
  EXPECT_EQ(full.counters.inner_equi, 0u);
}

TEST(Objectives, PsldLossGradientMatchesFiniteDifferences) {
  const auto& w = world();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto z = rng.normal_tensor({2});
    auto cfg = base_config(Algorithm::psld);
    cfg.gamma_psld = 0.7;
    for (auto norm : {LossNorm::l2, LossNorm::squared_l2}) {
      cfg.guidance_norm = norm;
      auto f = [&](const Tensor& v) { return psld_objective(*w.ae, w.op, w.y_pixel, v, cfg).total; };
      EXPECT_LT(check_gradient(f, z, 1e-6), 1e-4) << seed;
    }
  }
}

TEST(Objectives, ResampleAndSitcomGradientsMatchFiniteDifferences) {
  const auto& w = world();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 20);
    auto z = rng.normal_tensor({2});
    auto f = [&](const Tensor& v) { return resample_data_objective(*w.ae, w.op, w.y_pixel, v); };
    EXPECT_LT(check_gradient(f, z, 1e-6), 1e-4);
    auto x = rng.normal_tensor({4});
    auto v0 = rng.normal_tensor({4});
    auto g = [&](const Tensor& v) {
      return sitcom_measurement_objective(*w.pixel_model, w.op, w.y_pixel, x, v, 60, 0.3);
    };
    EXPECT_LT(check_gradient(g, v0, 1e-6), 1e-4);
  }
}

TEST(Objectives, PsldGluingVanishesOnManifold) {
  // Identity operator and a coordinate autoencoder: with y = D(z0) the glued
  // image is D(z0) itself and E(D(z0)) = z0.
  const std::size_t d = 4, k = 2;
  std::vector<double> we(d * k, 0.0), wd(k * d, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    we[i * k + i] = 1.0;
    wd[i * d + i] = 1.0;
  }
  Autoencoder ae({d}, Mlp::from_layout({{"widths", {d, k}}, {"activation", "relu"}}, {Tensor({d, k}, we), Tensor::zeros({1, k})}),
                 Mlp::from_layout({{"widths", {k, d}}, {"activation", "relu"}}, {Tensor({k, d}, wd), Tensor::zeros({1, d})}));
  auto ident = MeasurementOperator::make({{"kind", "identity"}}, {d});
  auto z0 = Tensor::vector({0.7, -1.1});
  SamplerConfig cfg;
  cfg.algorithm = Algorithm::psld;
  cfg.eta_psld = 0.0;
  cfg.gamma_psld = 1.0;
  auto loss = psld_objective(ae, ident, ae.decode(z0), z0, cfg);
  EXPECT_EQ(loss.measurement.item(), 0.0);
  EXPECT_EQ(loss.total.item(), 0.0);
}

TEST(SamplerConfig, JsonRoundTripAndUnknownKeys) {
  auto c = base_config(Algorithm::equicon_resample);
  c.resample_steps = std::vector<std::size_t>{1, 4};
  c.guidance_norm = LossNorm::l2;
  auto j = c.to_json();
  auto back = SamplerConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_THROW(SamplerConfig::from_json({{"stepz", 3}}), ConfigError);
  EXPECT_THROW(SamplerConfig::from_json({{"algorithm", "dpss"}}), ConfigError);
  EXPECT_EQ(SamplerConfig{}.effective_guidance_norm(), LossNorm::squared_l2);
  SamplerConfig p;
  p.algorithm = Algorithm::equi_psld;
  EXPECT_EQ(p.effective_guidance_norm(), LossNorm::l2);
  p.zeta = -1.0;
  EXPECT_THROW(p.validate(100), ConfigError);
}

TEST(Trajectory, SummaryAndCsv) {
  const auto& w = world();
  auto c = base_config(Algorithm::equi_dps);
  auto traj = run_sampler(c, w.inputs(Algorithm::equi_dps));
  auto s = traj.summary(c, false);
  EXPECT_FALSE(s.contains("wall_seconds"));
  EXPECT_EQ(s["counters"]["reg_grads"], 18);
  EXPECT_TRUE(traj.summary(c).contains("wall_seconds"));
  auto csv = traj.steps_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,s,measurement_loss,equi_loss,inner_meas,inner_equi");
}
