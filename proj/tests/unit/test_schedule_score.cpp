#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "equireg/autodiff.hpp"
#include "equireg/gmm.hpp"
#include "equireg/schedule.hpp"
#include "equireg/score_model.hpp"

using namespace equireg;

namespace {

GMMPrior isotropic(std::size_t d, double var = 1.0) {
  GMMPrior g;
  g.weights = {1.0};
  g.means = {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))};
  g.covariances = {var * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
  return g;
}

GMMPrior two_component_2d() {
  GMMPrior g;
  g.weights = {0.3, 0.7};
  g.means = {Eigen::Vector2d(-2.0, 0.5), Eigen::Vector2d(1.5, -1.0)};
  Eigen::Matrix2d a, b;
  a << 0.5, 0.2, 0.2, 0.4;
  b << 0.3, -0.1, -0.1, 0.6;
  g.covariances = {a, b};
  return g;
}

// Brute-force log density of the noised mixture using dense inverses.
double dense_log_pt(const GMMPrior& g, const Eigen::VectorXd& x, double ab) {
  const auto d = x.size();
  double best = -INFINITY;
  std::vector<double> terms;
  for (std::size_t k = 0; k < g.size(); ++k) {
    Eigen::MatrixXd c = ab * g.covariances[k] + (1.0 - ab) * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd r = x - std::sqrt(ab) * g.means[k];
    const double quad = r.dot(c.inverse() * r);
    const double t = std::log(g.weights[k]) - 0.5 * (quad + std::log(c.determinant()) + d * std::log(2 * std::numbers::pi));
    terms.push_back(t);
    best = std::max(best, t);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

}  // namespace

TEST(Schedule, SingleStepHalf) {
  auto s = make_linear_schedule(1, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
}

TEST(Schedule, TwoEqualSteps) {
  auto s = make_linear_schedule(2, 0.1, 0.1);
  EXPECT_NEAR(s.alpha_bar(2), 0.81, 1e-15);
}

TEST(Schedule, AlphaBarMatchesIndependentProduct) {
  auto s = make_linear_schedule(1000, 1e-4, 0.02);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
    EXPECT_NEAR(s.beta(t), beta, 1e-15);
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12);
  }
}

TEST(Schedule, InvariantsAndSigmaTilde) {
  auto s = make_linear_schedule(200, 1e-3, 0.05);
  for (int t = 1; t <= 200; ++t) {
    EXPECT_GT(s.alpha_bar(t), 0.0);
    EXPECT_LE(s.alpha_bar(t), 1.0);
    if (t > 1) {
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      EXPECT_GT(s.beta(t), s.beta(t - 1));
    }
    const double want = std::sqrt(s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)));
    EXPECT_NEAR(s.sigma_tilde(t), want, 1e-15);
  }
}

TEST(Schedule, BoundsViolated) {
  EXPECT_THROW(make_linear_schedule(0, 0.1, 0.2), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.2, 0.1), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.0, 0.1), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.1, 1.0), ConfigError);
}

TEST(Schedule, JsonRoundTrip) {
  auto s = make_linear_schedule(50, 1e-3, 0.04);
  auto r = NoiseSchedule::from_json(s.to_json());
  for (int t = 1; t <= 50; ++t) EXPECT_EQ(r.alpha_bar(t), s.alpha_bar(t));
}

TEST(Schedule, SubsequenceEvenlySpaced) {
  auto full = step_subsequence(1000, 1000);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(full[i], i + 1);
  auto sub = step_subsequence(1000, 100);
  ASSERT_EQ(sub.size(), 100u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sub[i], 10 * (i + 1));
  auto odd = step_subsequence(10, 3);
  EXPECT_EQ(odd, (std::vector<int>{4, 7, 10}));
}

TEST(Schedule, AncestralJumpReducesToSingleStep) {
  auto s = make_linear_schedule(100, 1e-3, 0.05);
  for (int t = 2; t <= 100; ++t) {
    auto a = ancestral_step(s, t, t - 1);
    const double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1);
    EXPECT_NEAR(a.coef_x0, std::sqrt(abp) * s.beta(t) / (1 - ab), 1e-14);
    EXPECT_NEAR(a.coef_xt, std::sqrt(s.alpha(t)) * (1 - abp) / (1 - ab), 1e-14);
    EXPECT_NEAR(a.sigma, s.sigma_tilde(t), 1e-14);
  }
}

TEST(GmmScore, StandardNormalStaysStandard) {
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  AnalyticGmmScore model(isotropic(3), sched);
  Rng rng(1);
  for (int t : {1, 17, 50, 100}) {
    auto x = rng.normal_tensor({3});
    auto s = model.score(x, t);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.data()[i], -x.data()[i], 1e-12);
  }
}

TEST(GmmScore, SymmetricPriorHasZeroNormalComponentOnAxis) {
  GMMPrior g;
  g.weights = {0.5, 0.5};
  g.means = {Eigen::Vector2d(-1.5, 0.3), Eigen::Vector2d(1.5, 0.3)};
  g.covariances = {Eigen::Matrix2d::Identity() * 0.2, Eigen::Matrix2d::Identity() * 0.2};
  GMMDensity density(g);
  std::vector<double> x{0.0, 0.7}, out(2);
  density.score(x, 0.6, out);
  EXPECT_NEAR(out[0], 0.0, 1e-14);
}

TEST(GmmScore, FarTailMatchesNearestComponent) {
  GMMPrior g;
  g.weights = {0.5, 0.5};
  g.means = {Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0)};
  g.covariances = {Eigen::MatrixXd::Constant(1, 1, 0.3), Eigen::MatrixXd::Constant(1, 1, 0.3)};
  GMMDensity density(g);
  const double ab = 0.7;
  std::vector<double> x{12.0}, out(1);
  density.score(x, ab, out);
  const double var = ab * 0.3 + 1 - ab;
  const double nearest = -(12.0 - std::sqrt(ab) * 1.0) / var;
  EXPECT_NEAR(out[0], nearest, 1e-6);
}

TEST(GmmScore, MatchesFiniteDifferenceOfLogDensity) {
  Rng rng(2);
  GMMPrior one_d;
  one_d.weights = {0.25, 0.75};
  one_d.means = {Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 2.0)};
  one_d.covariances = {Eigen::MatrixXd::Constant(1, 1, 0.2), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  for (const auto& g : {one_d, two_component_2d()}) {
    GMMDensity density(g);
    const auto d = g.dim();
    for (int trial = 0; trial < 100; ++trial) {
      const double ab = rng.uniform(0.05, 0.99);
      auto x = rng.normal_vector(d);
      for (auto& v : x) v *= 2.0;
      std::vector<double> s(d);
      density.score(x, ab, s);
      for (std::size_t i = 0; i < d; ++i) {
        const double h = 1e-5;
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        Eigen::Map<Eigen::VectorXd> ep(xp.data(), d), em(xm.data(), d);
        const double fd = (dense_log_pt(g, ep, ab) - dense_log_pt(g, em, ab)) / (2 * h);
        EXPECT_NEAR(s[i], fd, 1e-6);
      }
      Eigen::Map<Eigen::VectorXd> ex(x.data(), d);
      EXPECT_NEAR(density.log_density(x, ab), dense_log_pt(g, ex, ab), 1e-10);
    }
  }
}

TEST(GmmScore, BackwardIsExactHessianVector) {
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  AnalyticGmmScore model(two_component_2d(), sched);
  Rng rng(3);
  Tensor w = rng.normal_tensor({2});
  for (int t : {5, 40, 90}) {
    auto x = rng.normal_tensor({2});
    EXPECT_LT(check_gradient([&](const Tensor& v) { return sum(mul(model.score(v, t), w)); }, x, 1e-5), 1e-6);
  }
}

TEST(GmmScore, BatchedRowsMatchSingleRows) {
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  AnalyticGmmScore model(two_component_2d(), sched);
  Rng rng(4);
  auto batch = rng.normal_tensor({5, 2});
  auto out = model.score(batch, 30);
  for (std::size_t r = 0; r < 5; ++r) {
    auto row = model.score(Tensor({2}, {batch.data()[2 * r], batch.data()[2 * r + 1]}), 30);
    EXPECT_EQ(out.data()[2 * r], row.data()[0]);
    EXPECT_EQ(out.data()[2 * r + 1], row.data()[1]);
  }
}

TEST(GmmPrior, ValidationRejectsBadInputs) {
  auto g = isotropic(2);
  g.weights = {0.9};
  EXPECT_THROW(g.validate(), ConfigError);
  auto h = isotropic(2);
  h.covariances[0](0, 1) = 0.5;
  EXPECT_THROW(h.validate(), ConfigError);
  auto k = isotropic(2);
  k.covariances[0] << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(k.validate(), ConfigError);
}

TEST(GmmSampling, MomentsOfStandardNormal) {
  Rng rng(5);
  auto m = sample_gmm_matrix(isotropic(3), 10000, rng);
  Eigen::RowVectorXd mu = m.colwise().mean();
  Eigen::MatrixXd centered = m.rowwise() - mu;
  Eigen::MatrixXd cov = centered.transpose() * centered / 9999.0;
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(3, 3)).norm() / std::sqrt(3.0), 0.05);
}

TEST(GmmSampling, TinyCovarianceSamplesNearMean) {
  auto g = isotropic(2, 1e-12);
  g.means[0] << 3.0, -1.0;
  Rng rng(6);
  for (const auto& s : sample_gmm(g, 20, rng)) {
    EXPECT_NEAR(s.data()[0], 3.0, 1e-4);
    EXPECT_NEAR(s.data()[1], -1.0, 1e-4);
  }
}

TEST(GmmSampling, SeedDeterminism) {
  Rng a(7), b(7);
  auto x = sample_gmm(two_component_2d(), 50, a), y = sample_gmm(two_component_2d(), 50, b);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(x[i].to_vector(), y[i].to_vector());
}

TEST(Tweedie, ClosedFormOnStandardNormal) {
  // For N(0, I) data, E[x0 | xt] = sqrt(ab) xt.
  auto sched = make_linear_schedule(1000, 1e-4, 0.02);
  AnalyticGmmScore model(isotropic(2), sched);
  Rng rng(8);
  for (int t = 1; t <= 1000; ++t) {
    auto x = rng.normal_tensor({2});
    auto x0 = tweedie_x0(x, t, model);
    const double sab = std::sqrt(sched.alpha_bar(t));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(x0.data()[i], sab * x.data()[i], 1e-6);
  }
}

TEST(Tweedie, QuarterAlphaBarExample) {
  // alpha_bar = 0.25 exactly at T=1 with beta = 0.75.
  NoiseSchedule sched({0.75});
  AnalyticGmmScore model(isotropic(2), sched);
  auto x0 = tweedie_x0(Tensor::vector({1.0, 0.0}), 1, model);
  EXPECT_NEAR(x0.data()[0], 0.5, 1e-15);
  EXPECT_NEAR(x0.data()[1], 0.0, 1e-15);
}

TEST(Tweedie, NoNoiseLimitReturnsInput) {
  NoiseSchedule sched({1e-10});
  AnalyticGmmScore model(two_component_2d(), sched);
  auto x = Tensor::vector({0.3, -0.4});
  auto x0 = tweedie_x0(x, 1, model);
  EXPECT_NEAR(x0.data()[0], 0.3, 1e-8);
  EXPECT_NEAR(x0.data()[1], -0.4, 1e-8);
}

TEST(Tweedie, MatchesPerComponentConditioningOracle) {
  auto g = two_component_2d();
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  AnalyticGmmScore model(g, sched);
  Rng rng(9);
  for (int t : {3, 30, 80}) {
    const double ab = sched.alpha_bar(t), sab = std::sqrt(ab);
    Eigen::Vector2d x(rng.normal(), rng.normal());
    // Brute force: responsibilities from dense marginals, then E[x0 | xt, k].
    std::vector<double> logw;
    std::vector<Eigen::Vector2d> cond;
    for (std::size_t k = 0; k < g.size(); ++k) {
      Eigen::Matrix2d c = ab * g.covariances[k] + (1 - ab) * Eigen::Matrix2d::Identity();
      Eigen::Vector2d r = x - sab * g.means[k];
      logw.push_back(std::log(g.weights[k]) - 0.5 * (r.dot(c.inverse() * r) + std::log(c.determinant())));
      cond.push_back(g.means[k] + sab * g.covariances[k] * c.inverse() * r);
    }
    const double m = std::max(logw[0], logw[1]);
    const double w0 = std::exp(logw[0] - m), w1 = std::exp(logw[1] - m);
    Eigen::Vector2d want = (w0 * cond[0] + w1 * cond[1]) / (w0 + w1);
    auto got = tweedie_x0(Tensor::vector({x(0), x(1)}), t, model);
    EXPECT_NEAR(got.data()[0], want(0), 1e-10);
    EXPECT_NEAR(got.data()[1], want(1), 1e-10);
  }
}

TEST(Denoiser, ZeroStepsIsUntrained) {
  auto sched = make_linear_schedule(50, 1e-3, 0.05);
  DenoiserConfig cfg;
  cfg.steps = 0;
  auto m = train_denoiser({Tensor::vector({1.0, 2.0})}, sched, cfg);
  EXPECT_FALSE(m->trained);
  EXPECT_EQ(m->score(Tensor::vector({0.1, 0.2}), 10).shape(), (Shape{2}));
}

TEST(Denoiser, RepeatedPointIsRecoveredAtSmallNoise) {
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  const Tensor p = Tensor::vector({1.5, -0.5});
  DenoiserConfig cfg;
  cfg.steps = 1500;
  cfg.hidden = 64;
  cfg.lr = 3e-3;
  cfg.seed = 3;
  auto m = train_denoiser(std::vector<Tensor>(8, p), sched, cfg);
  EXPECT_TRUE(m->trained);
  EXPECT_LE(m->final_loss, 0.5 * m->initial_loss);
  Rng rng(10);
  const int t = 3;
  const double ab = sched.alpha_bar(t);
  std::vector<double> xt(2);
  for (std::size_t i = 0; i < 2; ++i) xt[i] = std::sqrt(ab) * p.data()[i] + std::sqrt(1 - ab) * rng.normal();
  auto x0 = tweedie_x0(Tensor({2}, xt), t, *m);
  EXPECT_LT(norm(sub(x0, p).data()), 0.1 * norm(p.data()));
}

TEST(Denoiser, LearnsGmmScoreDirection) {
  auto g = two_component_2d();
  auto sched = make_linear_schedule(100, 1e-3, 0.05);
  Rng rng(11);
  auto data = sample_gmm(g, 2000, rng);
  DenoiserConfig cfg;
  cfg.steps = 3000;
  cfg.seed = 4;
  cfg.lr = 2e-3;
  auto m = train_denoiser(data, sched, cfg);
  AnalyticGmmScore exact(g, sched);
  // A full-rank mixture leaves an irreducible epsilon-prediction loss; the
  // exact score gives the Bayes-optimal predictor, so training is judged
  // against that floor.
  double bayes = 0.0;
  const int mc = 4000;
  auto mc_x0 = sample_gmm(g, mc, rng);
  for (int i = 0; i < mc; ++i) {
    const int t = static_cast<int>(rng.index(100)) + 1;
    const double ab = sched.alpha_bar(t);
    std::vector<double> eps(2), xt(2);
    for (std::size_t j = 0; j < 2; ++j) {
      eps[j] = rng.normal();
      xt[j] = std::sqrt(ab) * mc_x0[i].data()[j] + std::sqrt(1 - ab) * eps[j];
    }
    auto best = exact.epsilon(Tensor({2}, xt), t);
    for (std::size_t j = 0; j < 2; ++j) bayes += std::pow(best.data()[j] - eps[j], 2) / 2.0;
  }
  bayes /= mc;
  EXPECT_LT(m->final_loss, m->initial_loss);
  EXPECT_LE(m->final_loss, 1.1 * bayes + 0.02) << "bayes floor " << bayes;
  const int t = 50;
  const double ab = sched.alpha_bar(t);
  double cos_sum = 0.0;
  const int n = 200;
  auto x0s = sample_gmm(g, n, rng);
  for (const auto& x0 : x0s) {
    std::vector<double> xt(2);
    for (std::size_t i = 0; i < 2; ++i) xt[i] = std::sqrt(ab) * x0.data()[i] + std::sqrt(1 - ab) * rng.normal();
    Tensor x({2}, xt);
    auto a = m->score(x, t), b = exact.score(x, t);
    cos_sum += dot(a.data(), b.data()) / (norm(a.data()) * norm(b.data()));
  }
  EXPECT_GT(cos_sum / n, 0.9);
}

TEST(Denoiser, TrainingLossIsNonNegativeAndCheckpointRoundTrips) {
  auto sched = make_linear_schedule(20, 1e-3, 0.1);
  Rng rng(12);
  std::vector<Tensor> grid;
  for (int i = 0; i < 16; ++i) grid.push_back(rng.normal_tensor({4, 4}));
  DenoiserConfig cfg;
  cfg.steps = 20;
  cfg.channels = 4;
  cfg.batch = 4;
  auto m = train_denoiser(grid, sched, cfg);
  EXPECT_EQ(m->arch(), DenoiserScore::Arch::conv);
  EXPECT_GE(m->initial_loss, 0.0);
  EXPECT_GE(m->final_loss, 0.0);
  auto path = std::filesystem::temp_directory_path() / "equireg_denoiser_ckpt.bin";
  save_score_model(path, *m);
  auto back = load_score_model(path);
  auto x = rng.normal_tensor({4, 4});
  EXPECT_EQ(back->score(x, 7).to_vector(), m->score(x, 7).to_vector());
  std::filesystem::remove(path);
}

TEST(ScoreModel, TimestepOutOfRangeThrows) {
  auto sched = make_linear_schedule(10, 1e-3, 0.05);
  AnalyticGmmScore model(isotropic(2), sched);
  EXPECT_THROW(model.score(Tensor::vector({0.0, 0.0}), 0), ConfigError);
  EXPECT_THROW(model.score(Tensor::vector({0.0, 0.0}), 11), ConfigError);
}
