#pragma once

#include <vector>

#include <nlohmann/json.hpp>

namespace equireg {

/// Discrete variance-preserving schedule for t = 1..T. Index 0 holds the
/// clean-data convention beta=0, alpha_bar=1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return alpha_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double sigma_tilde(int t) const { return sigma_tilde_.at(t); }

  double beta_min() const { return beta_.size() > 1 ? beta_[1] : 0.0; }
  double beta_max() const { return beta_.back(); }
  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_tilde_;
};

/// Linearly spaced betas in [beta_min, beta_max].
NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max);

/// Evenly spaced subsequence tau_1 < ... < tau_N of 1..T with tau_i = ceil(i*T/N);
/// N == T recovers every step and tau_N == T always.
std::vector<int> step_subsequence(int total_steps, int n);

/// Coefficients of the ancestral (DDPM posterior) move from t to s < t:
/// x_s = coef_xt * x_t + coef_x0 * x0 + sigma * eps. For s = t-1 these are the
/// single-step coefficients and sigma = sigma_tilde(t).
struct AncestralStep {
  double coef_xt = 0.0;
  double coef_x0 = 0.0;
  double sigma = 0.0;
};
AncestralStep ancestral_step(const NoiseSchedule& sched, int t, int s);

}  // namespace equireg
