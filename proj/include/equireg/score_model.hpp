#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/gmm.hpp"
#include "equireg/nn.hpp"
#include "equireg/schedule.hpp"
#include "equireg/serialize.hpp"

namespace equireg {

enum class ScoreKind { analytic_gmm, trained_denoiser };

/// s_theta(x_t, t). Implementations are immutable after construction and may
/// be shared across concurrently running sampler chains.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual ScoreKind kind() const = 0;
  const NoiseSchedule& schedule() const { return schedule_; }
  const Shape& sample_shape() const { return sample_shape_; }

  /// Differentiable score at timestep t in 1..T. `x` is one sample, or a
  /// batch whose trailing axes equal sample_shape().
  virtual Tensor score(const Tensor& x, int t) const = 0;
  /// Noise prediction, eps = -sqrt(1 - alpha_bar_t) * score.
  virtual Tensor epsilon(const Tensor& x, int t) const;

  virtual Bundle to_bundle() const = 0;

 protected:
  ScoreModel(NoiseSchedule schedule, Shape sample_shape);
  void check_timestep(int t) const;

 private:
  NoiseSchedule schedule_;
  Shape sample_shape_;
};

/// Exact score of a Gaussian-mixture data distribution.
class AnalyticGmmScore final : public ScoreModel {
 public:
  AnalyticGmmScore(GMMPrior prior, NoiseSchedule schedule, Shape sample_shape = {});

  ScoreKind kind() const override { return ScoreKind::analytic_gmm; }
  Tensor score(const Tensor& x, int t) const override;
  Bundle to_bundle() const override;

  const GMMPrior& prior() const { return density_->prior(); }
  const std::shared_ptr<const GMMDensity>& density() const { return density_; }

 private:
  std::shared_ptr<const GMMDensity> density_;
};

struct DenoiserConfig {
  std::string arch = "auto";  // "mlp", "conv", or "auto" (mlp for vectors, conv for grids)
  std::size_t hidden = 128;
  std::size_t hidden_layers = 3;
  std::size_t channels = 32;
  std::size_t conv_layers = 4;
  std::size_t kernel = 3;
  std::size_t embed_dim = 16;
  std::string activation = "relu";
  int steps = 2000;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  static DenoiserConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Epsilon-prediction network; score = -eps_hat / sqrt(1 - alpha_bar_t).
class DenoiserScore final : public ScoreModel {
 public:
  enum class Arch { mlp, conv };

  DenoiserScore(Arch arch, nlohmann::json layout, std::vector<Tensor> params, NoiseSchedule schedule,
                Shape sample_shape);

  ScoreKind kind() const override { return ScoreKind::trained_denoiser; }
  Tensor score(const Tensor& x, int t) const override;
  Tensor epsilon(const Tensor& x, int t) const override;
  Bundle to_bundle() const override;

  /// Network output for a batch with per-row timesteps.
  Tensor predict(const Tensor& x_batch, const std::vector<int>& timesteps) const;
  /// Same, but with caller-owned parameters (used during training).
  Tensor predict_with(const std::vector<Tensor>& params, const Tensor& x_batch,
                      const std::vector<int>& timesteps) const;

  Arch arch() const { return arch_; }
  const std::vector<Tensor>& params() const { return params_; }
  const nlohmann::json& layout() const { return layout_; }

  bool trained = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int train_steps = 0;

  static std::vector<Tensor> init_params(Arch arch, const nlohmann::json& layout, Rng& rng);

 private:
  Arch arch_;
  nlohmann::json layout_;
  std::vector<Tensor> params_;
};

/// Trains an epsilon-prediction network by denoising score matching. With
/// cfg.steps == 0 the initialised, untrained model is returned.
std::shared_ptr<DenoiserScore> train_denoiser(const std::vector<Tensor>& dataset, const NoiseSchedule& sched,
                                              const DenoiserConfig& cfg);

/// Posterior mean E[x_0 | x_t] = (x_t + (1 - ab_t) score) / sqrt(ab_t).
Tensor tweedie_x0(const Tensor& x_t, int t, const ScoreModel& model);

void save_score_model(const std::filesystem::path& path, const ScoreModel& model);
std::shared_ptr<ScoreModel> load_score_model(const std::filesystem::path& path);
std::shared_ptr<ScoreModel> score_model_from_bundle(const Bundle& bundle);

}  // namespace equireg
