#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/measure.hpp"
#include "equireg/mpe.hpp"
#include "equireg/score_model.hpp"

namespace equireg {

/// The equi-* and equicon-* variants add a regulariser to the baseline of the
/// same family: dps, psld, resample and sitcom run without an MPE function.
enum class Algorithm {
  ancestral,
  ddim,
  dps,
  equi_dps,
  psld,
  equi_psld,
  equicon_psld,
  resample,
  equi_resample,
  equicon_resample,
  sitcom,
  equi_sitcom
};

Algorithm parse_algorithm(const std::string& name);
const char* algorithm_name(Algorithm a);
/// Samplers that run the chain in the autoencoder latent space.
bool is_latent(Algorithm a);
bool is_regularized(Algorithm a);
bool uses_equicon(Algorithm a);
/// The unregularised sampler an equi-variant reduces to.
Algorithm baseline_of(Algorithm a);

struct SamplerConfig {
  Algorithm algorithm = Algorithm::dps;
  int steps = 100;
  /// DPS guidance scale; with zeta_normalized it is divided by ||y - A(x0|t)||.
  double zeta = 1.0;
  bool zeta_normalized = false;
  /// Defaults: squared for the DPS family, unsquared for PSLD.
  std::optional<LossNorm> guidance_norm;
  double eta_psld = 1.0;
  double gamma_psld = 0.1;
  double gamma_resample = 40.0;
  /// Inner loops stop once the squared residual drops below delta^2.
  double delta = 0.0;
  int k_meas = 10;
  int k_equi = 0;
  double inner_lr = 0.01;
  /// Weight of ||x_t - v||^2 in the SITCOM measurement stage.
  double sitcom_closeness = 0.0;
  EquiLossConfig equi;
  std::uint64_t seed = 0;
  double ddim_eta = 0.0;
  /// Apply lambda * grad R with respect to x0|t directly instead of through Tweedie.
  bool detached = false;
  /// Resample set C as sampling-order step indices; empty optional means every step.
  std::optional<std::vector<std::size_t>> resample_steps;
  /// Keep x_t and x0|t on every record.
  bool record_states = true;

  LossNorm effective_guidance_norm() const;
  bool resamples(std::size_t step) const;
  void validate(int total_steps) const;

  static SamplerConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct StepRecord {
  int t = 0;
  int s = 0;
  double measurement_loss = 0.0;
  /// NaN on steps without a regulariser evaluation.
  double equi_loss = 0.0;
  bool regularized = false;
  int inner_meas = 0;
  int inner_equi = 0;
  Tensor state;  // x_t or z_t
  Tensor x0;     // x0|t or z0|t
};

struct SamplerCounters {
  std::size_t score_evals = 0;
  std::size_t score_vjps = 0;
  std::size_t guidance_grads = 0;
  std::size_t reg_grads = 0;
  std::size_t inner_meas = 0;
  std::size_t inner_equi = 0;
  std::size_t resampled = 0;
};

struct Trajectory {
  Algorithm algorithm = Algorithm::ancestral;
  std::vector<StepRecord> records;
  /// Final sample in data space (decoded for latent samplers).
  Tensor sample;
  /// Final latent for latent samplers; empty otherwise.
  Tensor latent;
  SamplerCounters counters;
  double wall_seconds = 0.0;

  /// t, s, measurement_loss, equi_loss, inner_meas, inner_equi per step.
  std::string steps_csv() const;
  /// Config echo, seed, counters and inner-step totals. Wall-clock is
  /// included only when requested, so summaries can be hashed.
  nlohmann::json summary(const SamplerConfig& cfg, bool include_wall_clock = true) const;
};

struct SamplerInputs {
  const ScoreModel* model = nullptr;
  const MeasurementOperator* op = nullptr;
  Tensor y;
  const MPEFunction* mpe = nullptr;
  const Autoencoder* ae = nullptr;
};

/// Runs cfg.algorithm. Throws NumericError naming the step when a gradient
/// or state stops being finite.
Trajectory run_sampler(const SamplerConfig& cfg, const SamplerInputs& in);

Trajectory ancestral_sample(const ScoreModel& model, SamplerConfig cfg);
/// n independent ancestral chains advanced together; returns [n, ...shape].
Tensor ancestral_sample_batch(const ScoreModel& model, int steps, std::size_t n, std::uint64_t seed);
Trajectory ddim_sample(const ScoreModel& model, SamplerConfig cfg);
Trajectory dps_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y, SamplerConfig cfg);
Trajectory equi_dps_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                           const MPEFunction& m, SamplerConfig cfg);
Trajectory equi_psld_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                            const Tensor& y, const MPEFunction& m, SamplerConfig cfg);
Trajectory equicon_psld_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                               const Tensor& y, const MPEFunction& m, SamplerConfig cfg);
Trajectory equi_resample_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                                const Tensor& y, const MPEFunction& m, SamplerConfig cfg);
Trajectory equicon_resample_sample(const ScoreModel& latent_model, const Autoencoder& ae,
                                   const MeasurementOperator& op, const Tensor& y, const MPEFunction& m,
                                   SamplerConfig cfg);
Trajectory equi_sitcom_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                              const MPEFunction& m, SamplerConfig cfg);

struct PsldLoss {
  Tensor measurement;  // ||y - A(D(z0))|| under the guidance norm
  Tensor total;        // eta * measurement + gamma * gluing
};
/// The gluing term is ||z0 - E(A^T y + D(z0) - A^T A D(z0))||.
PsldLoss psld_objective(const Autoencoder& ae, const MeasurementOperator& op, const Tensor& y, const Tensor& z0,
                        const SamplerConfig& cfg);
/// 1/2 ||y - A(D(z))||^2, the data term of the ReSample inner loop.
Tensor resample_data_objective(const Autoencoder& ae, const MeasurementOperator& op, const Tensor& y,
                               const Tensor& z);
/// ||A(tweedie(v, t)) - y||^2 + closeness * ||x - v||^2.
Tensor sitcom_measurement_objective(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                                    const Tensor& x, const Tensor& v, int t, double closeness);

/// Draw from N((s2 sqrt(ab) z0 + gamma z') / (s2 + gamma), s2^2 / (s2 + gamma) I)
/// with s2 = 1 - ab. gamma -> infinity returns z' and gamma = 0 re-noises z0.
Tensor stochastic_resample(const Tensor& z0, const Tensor& z_prime, double alpha_bar, double gamma, Rng& rng);

}  // namespace equireg
