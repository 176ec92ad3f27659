#include "equireg/schedule.hpp"

#include <cmath>

#include "equireg/error.hpp"

namespace equireg {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  const std::size_t n = betas.size();
  beta_.assign(n + 1, 0.0);
  alpha_.assign(n + 1, 1.0);
  alpha_bar_.assign(n + 1, 1.0);
  sigma_tilde_.assign(n + 1, 0.0);
  for (std::size_t t = 1; t <= n; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta values must lie in (0,1)");
    if (t > 1 && b < beta_[t - 1]) throw ConfigError("beta values must be non-decreasing");
    beta_[t] = b;
    alpha_[t] = 1.0 - b;
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    sigma_tilde_[t] = std::sqrt(b * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]));
  }
}

nlohmann::json NoiseSchedule::to_json() const {
  auto linear = make_linear_schedule(steps(), beta_min(), beta_max());
  if (linear.beta_ == beta_) {
    return {{"kind", "linear"}, {"steps", steps()}, {"beta_min", beta_min()}, {"beta_max", beta_max()}};
  }
  return {{"kind", "explicit"}, {"betas", std::vector<double>(beta_.begin() + 1, beta_.end())}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.value("kind", std::string("linear"));
    if (kind == "explicit") return NoiseSchedule(j.at("betas").get<std::vector<double>>());
    if (kind != "linear") throw ConfigError("schedule: unknown kind '" + kind + "'");
    return make_linear_schedule(j.at("steps").get<int>(), j.at("beta_min").get<double>(),
                                j.at("beta_max").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule json: ") + e.what());
  }
}

NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / static_cast<double>(steps - 1);
  }
  return NoiseSchedule(std::move(betas));
}

std::vector<int> step_subsequence(int total_steps, int n) {
  if (n < 1 || n > total_steps) {
    throw ConfigError("step count " + std::to_string(n) + " must lie in 1.." + std::to_string(total_steps));
  }
  std::vector<int> taus(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) {
    const long long num = static_cast<long long>(i) * total_steps;
    taus[i - 1] = static_cast<int>((num + n - 1) / n);
  }
  return taus;
}

AncestralStep ancestral_step(const NoiseSchedule& sched, int t, int s) {
  if (!(s >= 0 && s < t && t <= sched.steps())) throw ConfigError("ancestral_step: need 0 <= s < t <= T");
  const double ab_t = sched.alpha_bar(t), ab_s = sched.alpha_bar(s);
  // 1 - ab_t/ab_s without cancellation: -expm1(sum of log(1 - beta_u)) over s < u <= t.
  double log_a = 0.0;
  for (int u = s + 1; u <= t; ++u) log_a += std::log1p(-sched.beta(u));
  const double a = std::exp(log_a);
  const double b = -std::expm1(log_a);
  AncestralStep step;
  step.coef_x0 = std::sqrt(ab_s) * b / (1.0 - ab_t);
  step.coef_xt = std::sqrt(a) * (1.0 - ab_s) / (1.0 - ab_t);
  step.sigma = std::sqrt(b * (1.0 - ab_s) / (1.0 - ab_t));
  return step;
}

}  // namespace equireg
