#include "equireg/samplers.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "equireg/autodiff.hpp"
#include "equireg/error.hpp"
#include "equireg/schedule.hpp"

namespace equireg {

namespace {

struct AlgorithmName {
  Algorithm a;
  const char* name;
};

constexpr AlgorithmName kAlgorithms[] = {
    {Algorithm::ancestral, "ancestral"},
    {Algorithm::ddim, "ddim"},
    {Algorithm::dps, "dps"},
    {Algorithm::equi_dps, "equi-dps"},
    {Algorithm::psld, "psld"},
    {Algorithm::equi_psld, "equi-psld"},
    {Algorithm::equicon_psld, "equicon-psld"},
    {Algorithm::resample, "resample"},
    {Algorithm::equi_resample, "equi-resample"},
    {Algorithm::equicon_resample, "equicon-resample"},
    {Algorithm::sitcom, "sitcom"},
    {Algorithm::equi_sitcom, "equi-sitcom"},
};

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  for (const auto& e : kAlgorithms) {
    if (name == e.name) return e.a;
  }
  throw ConfigError("unknown sampler algorithm '" + name + "'");
}

const char* algorithm_name(Algorithm a) {
  for (const auto& e : kAlgorithms) {
    if (a == e.a) return e.name;
  }
  return "?";
}

bool is_latent(Algorithm a) {
  switch (a) {
    case Algorithm::psld:
    case Algorithm::equi_psld:
    case Algorithm::equicon_psld:
    case Algorithm::resample:
    case Algorithm::equi_resample:
    case Algorithm::equicon_resample: return true;
    default: return false;
  }
}

bool uses_equicon(Algorithm a) { return a == Algorithm::equicon_psld || a == Algorithm::equicon_resample; }

bool is_regularized(Algorithm a) {
  switch (a) {
    case Algorithm::equi_dps:
    case Algorithm::equi_psld:
    case Algorithm::equicon_psld:
    case Algorithm::equi_resample:
    case Algorithm::equicon_resample:
    case Algorithm::equi_sitcom: return true;
    default: return false;
  }
}

Algorithm baseline_of(Algorithm a) {
  switch (a) {
    case Algorithm::equi_dps: return Algorithm::dps;
    case Algorithm::equi_psld:
    case Algorithm::equicon_psld: return Algorithm::psld;
    case Algorithm::equi_resample:
    case Algorithm::equicon_resample: return Algorithm::resample;
    case Algorithm::equi_sitcom: return Algorithm::sitcom;
    default: return a;
  }
}

LossNorm SamplerConfig::effective_guidance_norm() const {
  if (guidance_norm) return *guidance_norm;
  const auto base = baseline_of(algorithm);
  return base == Algorithm::psld ? LossNorm::l2 : LossNorm::squared_l2;
}

bool SamplerConfig::resamples(std::size_t step) const {
  if (!resample_steps) return true;
  for (auto s : *resample_steps) {
    if (s == step) return true;
  }
  return false;
}

void SamplerConfig::validate(int total_steps) const {
  if (steps < 1 || steps > total_steps) {
    throw ConfigError("sampler steps must lie in 1.." + std::to_string(total_steps));
  }
  for (double w : {zeta, eta_psld, gamma_psld, gamma_resample, delta, inner_lr, sitcom_closeness, ddim_eta}) {
    if (!(w >= 0.0)) throw ConfigError("sampler weights must be non-negative and finite");
  }
  if (k_meas < 0 || k_equi < 0) throw ConfigError("inner step counts must be >= 0");
  equi.validate();
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "algorithm") c.algorithm = parse_algorithm(it->get<std::string>());
      else if (k == "steps") c.steps = it->get<int>();
      else if (k == "zeta") c.zeta = it->get<double>();
      else if (k == "zeta_normalized") c.zeta_normalized = it->get<bool>();
      else if (k == "guidance_norm") c.guidance_norm = parse_loss_norm(it->get<std::string>());
      else if (k == "eta_psld") c.eta_psld = it->get<double>();
      else if (k == "gamma_psld") c.gamma_psld = it->get<double>();
      else if (k == "gamma_resample") c.gamma_resample = it->get<double>();
      else if (k == "delta") c.delta = it->get<double>();
      else if (k == "k_meas") c.k_meas = it->get<int>();
      else if (k == "k_equi") c.k_equi = it->get<int>();
      else if (k == "inner_lr") c.inner_lr = it->get<double>();
      else if (k == "sitcom_closeness") c.sitcom_closeness = it->get<double>();
      else if (k == "equi") c.equi = EquiLossConfig::from_json(*it);
      else if (k == "seed") c.seed = it->get<std::uint64_t>();
      else if (k == "ddim_eta") c.ddim_eta = it->get<double>();
      else if (k == "detached") c.detached = it->get<bool>();
      else if (k == "resample_steps") {
        if (it->is_string() && it->get<std::string>() == "all") c.resample_steps.reset();
        else c.resample_steps = it->get<std::vector<std::size_t>>();
      } else if (k == "record_states") c.record_states = it->get<bool>();
      else throw ConfigError("sampler config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampler config: ") + e.what());
  }
  return c;
}

nlohmann::json SamplerConfig::to_json() const {
  nlohmann::json j = {{"algorithm", algorithm_name(algorithm)},
                      {"steps", steps},
                      {"zeta", zeta},
                      {"zeta_normalized", zeta_normalized},
                      {"guidance_norm", loss_norm_name(effective_guidance_norm())},
                      {"eta_psld", eta_psld},
                      {"gamma_psld", gamma_psld},
                      {"gamma_resample", gamma_resample},
                      {"delta", delta},
                      {"k_meas", k_meas},
                      {"k_equi", k_equi},
                      {"inner_lr", inner_lr},
                      {"sitcom_closeness", sitcom_closeness},
                      {"equi", equi.to_json()},
                      {"seed", seed},
                      {"ddim_eta", ddim_eta},
                      {"detached", detached},
                      {"record_states", record_states}};
  if (resample_steps) j["resample_steps"] = *resample_steps;
  else j["resample_steps"] = "all";
  return j;
}

std::string Trajectory::steps_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "t,s,measurement_loss,equi_loss,inner_meas,inner_equi\n";
  for (const auto& r : records) {
    out << r.t << ',' << r.s << ',' << r.measurement_loss << ',';
    if (std::isnan(r.equi_loss)) out << "";
    else out << r.equi_loss;
    out << ',' << r.inner_meas << ',' << r.inner_equi << '\n';
  }
  return out.str();
}

nlohmann::json Trajectory::summary(const SamplerConfig& cfg, bool include_wall_clock) const {
  nlohmann::json j = {{"algorithm", algorithm_name(algorithm)},
                      {"config", cfg.to_json()},
                      {"seed", cfg.seed},
                      {"steps", records.size()},
                      {"counters",
                       {{"score_evals", counters.score_evals},
                        {"score_vjps", counters.score_vjps},
                        {"guidance_grads", counters.guidance_grads},
                        {"reg_grads", counters.reg_grads},
                        {"inner_meas", counters.inner_meas},
                        {"inner_equi", counters.inner_equi},
                        {"resampled", counters.resampled}}}};
  if (include_wall_clock) j["wall_seconds"] = wall_seconds;
  return j;
}

Tensor stochastic_resample(const Tensor& z0, const Tensor& z_prime, double alpha_bar, double gamma, Rng& rng) {
  if (z0.shape() != z_prime.shape()) throw ShapeError("stochastic_resample: shapes differ");
  const double s2 = 1.0 - alpha_bar, sa = std::sqrt(alpha_bar);
  std::vector<double> out(z0.numel());
  if (std::isinf(gamma)) return z_prime.detach();
  const double denom = s2 + gamma, sd = std::sqrt(s2 * s2 / denom);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = (s2 * sa * z0.data()[i] + gamma * z_prime.data()[i]) / denom;
    out[i] = mean + sd * rng.normal();
  }
  return Tensor(z0.shape(), std::move(out));
}

namespace {

void check_finite(const Tensor& t, std::size_t step, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("sampler: non-finite ") + what + " at step " + std::to_string(step));
    }
  }
}

Tensor axpy(const Tensor& x, double a, std::span<const double> g) {
  auto v = x.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += a * g[i];
  return Tensor(x.shape(), std::move(v));
}

std::vector<double> grad_or_zero(const Tensor& leaf) {
  if (!leaf.has_grad()) return std::vector<double>(leaf.numel(), 0.0);
  return {leaf.grad().begin(), leaf.grad().end()};
}

Tensor reduce(const Tensor& diff, LossNorm norm) { return norm == LossNorm::squared_l2 ? sq_norm(diff) : l2_norm(diff); }

class Chain {
 public:
  Chain(const SamplerConfig& cfg, const SamplerInputs& in)
      : cfg_(cfg), in_(in), rng_(cfg.seed), group_rng_(Rng(cfg.seed).fork(1)) {
    if (!in.model) throw ConfigError("sampler: no score model");
    sched_ = &in.model->schedule();
    cfg.validate(sched_->steps());
    taus_ = step_subsequence(sched_->steps(), cfg.steps);
    traj_.algorithm = cfg.algorithm;
    const auto a = cfg.algorithm;
    const bool needs_op = a != Algorithm::ancestral && a != Algorithm::ddim;
    if (needs_op && !in.op) throw ConfigError(std::string(algorithm_name(a)) + " needs a measurement operator");
    if (needs_op && in.y.numel() != numel_of(in.op->output_shape())) {
      throw ShapeError("sampler: measurement y does not match the operator output shape");
    }
    if (is_latent(a) && !in.ae) throw ConfigError(std::string(algorithm_name(a)) + " needs an autoencoder");
    if (baseline_of(a) == Algorithm::psld && !in.op->linear()) {
      throw ConfigError("PSLD variants need a linear operator (the gluing term uses A^T A)");
    }
    if (is_regularized(a) && !in.mpe) throw ConfigError(std::string(algorithm_name(a)) + " needs an MPE function");
    if (uses_equicon(a) && !in.mpe->has_inverse()) throw ConfigError("equicon samplers need an MPE function with h");
  }

  Trajectory run() {
    const auto start = std::chrono::steady_clock::now();
    Tensor x = rng_.normal_tensor(in_.model->sample_shape());
    const std::size_t n = taus_.size();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = n - k;
      const int t = taus_[i - 1];
      const int s = i > 1 ? taus_[i - 2] : 0;
      StepRecord rec;
      rec.t = t;
      rec.s = s;
      rec.equi_loss = std::numeric_limits<double>::quiet_NaN();
      if (cfg_.record_states) rec.state = x;
      try {
        x = step(x, t, s, k, n, rec);
      } catch (const NumericError& e) {
        const std::string what = e.what();
        if (what.rfind("sampler", 0) == 0 || what.rfind("resample", 0) == 0) throw;
        throw NumericError("sampler: " + what + " at step " + std::to_string(k) + " (t=" + std::to_string(t) + ")");
      }
      check_finite(x, k, "state");
      traj_.records.push_back(std::move(rec));
    }
    if (is_latent(cfg_.algorithm)) {
      traj_.latent = x;
      traj_.sample = in_.ae->decode(x).detach();
    } else {
      traj_.sample = x;
    }
    check_finite(traj_.sample, n, "sample");
    traj_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(traj_);
  }

 private:
  Tensor step(const Tensor& x, int t, int s, std::size_t k, std::size_t n, StepRecord& rec) {
    switch (baseline_of(cfg_.algorithm)) {
      case Algorithm::ancestral: return ancestral_step_plain(x, t, s, rec);
      case Algorithm::ddim: return ddim_step(x, t, s, rec);
      case Algorithm::dps: return dps_step(x, t, s, k, n, rec);
      case Algorithm::psld: return psld_step(x, t, s, k, n, rec);
      case Algorithm::resample: return resample_step(x, t, s, k, n, rec);
      case Algorithm::sitcom: return sitcom_step(x, t, s, k, n, rec);
      default: throw ConfigError("unsupported algorithm");
    }
  }

  Tensor tweedie(const Tensor& x, int t) {
    ++traj_.counters.score_evals;
    return tweedie_x0(x, t, *in_.model);
  }

  void record_x0(StepRecord& rec, const Tensor& x0) {
    if (cfg_.record_states) rec.x0 = x0.detach();
  }

  Tensor noise(const Shape& shape) { return rng_.normal_tensor(shape); }

  Tensor ancestral_proposal(const Tensor& x, const Tensor& x0, int t, int s) {
    const auto st = ancestral_step(*sched_, t, s);
    Tensor out = add(mul(x, st.coef_xt), mul(x0, st.coef_x0));
    if (s > 0) out = add(out, mul(noise(x.shape()), st.sigma));
    return out;
  }

  Tensor ancestral_step_plain(const Tensor& x, int t, int s, StepRecord& rec) {
    Tensor x0 = tweedie(x, t);
    record_x0(rec, x0);
    return ancestral_proposal(x, x0, t, s);
  }

  Tensor ddim_proposal(const Tensor& x, const Tensor& x0, int t, int s) {
    const double at = sched_->alpha_bar(t), as = sched_->alpha_bar(s);
    Tensor eps = mul(sub(x, mul(x0, std::sqrt(at))), 1.0 / std::sqrt(1.0 - at));
    const double sigma = cfg_.ddim_eta * std::sqrt((1.0 - as) / (1.0 - at)) * std::sqrt(1.0 - at / as);
    const double dir = std::sqrt(std::max(0.0, 1.0 - as - sigma * sigma));
    Tensor out = add(mul(x0, std::sqrt(as)), mul(eps, dir));
    if (sigma > 0.0 && s > 0) out = add(out, mul(noise(x.shape()), sigma));
    return out;
  }

  Tensor ddim_step(const Tensor& x, int t, int s, StepRecord& rec) {
    Tensor x0 = tweedie(x, t);
    record_x0(rec, x0);
    return ddim_proposal(x, x0, t, s);
  }

  // lambda * grad of the regulariser at x0 (a detached value); the loss value
  // goes to the record.
  std::vector<double> regulariser_grad(const Tensor& x0v, StepRecord& rec) {
    Tensor leaf = x0v.detach(true);
    Tensor r = uses_equicon(cfg_.algorithm) ? equicon_loss(*in_.mpe, leaf, group_rng_, cfg_.equi)
                                            : equi_loss(*in_.mpe, leaf, group_rng_, cfg_.equi);
    backward(r);
    ++traj_.counters.reg_grads;
    rec.regularized = true;
    rec.equi_loss = r.item();
    auto g = grad_or_zero(leaf);
    for (double& v : g) v *= cfg_.equi.lambda;
    return g;
  }

  bool regularise_now(std::size_t k, std::size_t n) const {
    return is_regularized(cfg_.algorithm) && cfg_.equi.applies(k, n);
  }

  // Shared DPS / PSLD update: the cotangent on x0|t is pulled back through
  // the Tweedie map in one VJP.
  Tensor guided_update(const Tensor& proposal, const Tensor& xl, const Tensor& x0, std::vector<double> c,
                       const std::vector<double>& reg, std::size_t k) {
    if (!reg.empty() && !cfg_.detached) {
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += reg[i];
    }
    backward(x0, c);
    ++traj_.counters.score_vjps;
    auto g = grad_or_zero(xl);
    Tensor out = axpy(proposal, -1.0, g);
    if (!reg.empty() && cfg_.detached) out = axpy(out, -1.0, reg);
    check_finite(Tensor(out.shape(), g), k, "guidance gradient");
    return out;
  }

  Tensor dps_step(const Tensor& x, int t, int s, std::size_t k, std::size_t n, StepRecord& rec) {
    Tensor xl = x.detach(true);
    Tensor x0 = tweedie(xl, t);
    Tensor x0v = x0.detach();
    record_x0(rec, x0v);
    Tensor proposal = ancestral_proposal(x, x0v, t, s);

    Tensor leaf = x0v.detach(true);
    Tensor residual = sub(in_.y, in_.op->apply(leaf));
    Tensor loss = reduce(residual, cfg_.effective_guidance_norm());
    backward(loss);
    ++traj_.counters.guidance_grads;
    rec.measurement_loss = loss.item();
    double zeta = cfg_.zeta;
    if (cfg_.zeta_normalized) {
      const double r = norm(residual.data());
      zeta = r > 0.0 ? cfg_.zeta / r : 0.0;
    }
    auto c = grad_or_zero(leaf);
    for (double& v : c) v *= zeta;
    std::vector<double> reg;
    if (regularise_now(k, n)) reg = regulariser_grad(x0v, rec);
    return guided_update(proposal, xl, x0, std::move(c), reg, k);
  }

  Tensor psld_step(const Tensor& z, int t, int s, std::size_t k, std::size_t n, StepRecord& rec) {
    Tensor zl = z.detach(true);
    Tensor z0 = tweedie(zl, t);
    Tensor z0v = z0.detach();
    record_x0(rec, z0v);
    Tensor proposal = ancestral_proposal(z, z0v, t, s);

    Tensor leaf = z0v.detach(true);
    auto [meas, loss] = psld_objective(*in_.ae, *in_.op, in_.y, leaf, cfg_);
    backward(loss);
    ++traj_.counters.guidance_grads;
    rec.measurement_loss = meas.item();
    auto c = grad_or_zero(leaf);
    std::vector<double> reg;
    if (regularise_now(k, n)) reg = regulariser_grad(z0v, rec);
    return guided_update(proposal, zl, z0, std::move(c), reg, k);
  }

  Tensor resample_step(const Tensor& z, int t, int s, std::size_t k, std::size_t n, StepRecord& rec) {
    Tensor z0 = tweedie(z, t).detach();
    record_x0(rec, z0);
    Tensor proposal = ddim_proposal(z, z0, t, s);
    auto residual_sq = [&](const Tensor& zz) { return resample_data_objective(*in_.ae, *in_.op, in_.y, zz); };
    rec.measurement_loss = 2.0 * residual_sq(z0).item();
    if (!cfg_.resamples(k)) return proposal;

    ++traj_.counters.resampled;
    const bool reg_on = regularise_now(k, n);
    Tensor zh = z0;
    double first = -1.0;
    for (int it = 0; it < cfg_.k_meas; ++it) {
      Tensor leaf = zh.detach(true);
      Tensor r2 = residual_sq(leaf);
      if (2.0 * r2.item() < cfg_.delta * cfg_.delta) break;
      Tensor meas = r2;
      backward(meas);
      ++traj_.counters.guidance_grads;
      auto g = grad_or_zero(leaf);
      double total = meas.item();
      if (reg_on) {
        auto gr = regulariser_grad(zh, rec);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gr[i];
        total += cfg_.equi.lambda * rec.equi_loss;
      }
      if (first < 0.0) first = total;
      else if (total > 10.0 * first) {
        throw NumericError("resample inner loop diverged at step " + std::to_string(k) + ", iteration " +
                           std::to_string(it));
      }
      zh = axpy(zh, -cfg_.inner_lr, g);
      check_finite(zh, k, "inner iterate");
      ++rec.inner_meas;
    }
    traj_.counters.inner_meas += static_cast<std::size_t>(rec.inner_meas);
    rec.measurement_loss = 2.0 * residual_sq(zh).item();
    if (s == 0) return zh;
    return stochastic_resample(zh, proposal, sched_->alpha_bar(s), cfg_.gamma_resample, rng_);
  }

  Tensor sitcom_step(const Tensor& x, int t, int s, std::size_t k, std::size_t n, StepRecord& rec) {
    const auto& op = *in_.op;
    std::vector<Tensor> v{x.detach(true)};
    Adam adam(cfg_.inner_lr);
    for (int it = 0; it < cfg_.k_meas; ++it) {
      ++traj_.counters.score_evals;
      if (sq_norm(sub(op.apply(tweedie_x0(v[0].detach(), t, *in_.model)), in_.y)).item() < cfg_.delta * cfg_.delta) {
        break;
      }
      ++traj_.counters.score_evals;
      backward(sitcom_measurement_objective(*in_.model, op, in_.y, x, v[0], t, cfg_.sitcom_closeness));
      ++traj_.counters.guidance_grads;
      ++traj_.counters.score_vjps;
      adam.step(v);
      check_finite(v[0], k, "inner iterate");
      ++rec.inner_meas;
    }
    if (regularise_now(k, n) && cfg_.k_equi > 0) {
      adam.reset();
      // The equivariance stage acts on v itself, like the measurement stage.
      for (int it = 0; it < cfg_.k_equi; ++it) {
        Tensor r = equi_loss(*in_.mpe, v[0], group_rng_, cfg_.equi);
        rec.regularized = true;
        rec.equi_loss = r.item();
        if (r.item() < cfg_.delta * cfg_.delta) break;
        backward(mul(r, cfg_.equi.lambda));
        ++traj_.counters.reg_grads;
        adam.step(v);
        check_finite(v[0], k, "inner iterate");
        ++rec.inner_equi;
      }
    }
    traj_.counters.inner_meas += static_cast<std::size_t>(rec.inner_meas);
    traj_.counters.inner_equi += static_cast<std::size_t>(rec.inner_equi);
    Tensor x0 = tweedie(v[0].detach(), t).detach();
    record_x0(rec, x0);
    rec.measurement_loss = sq_norm(sub(op.apply(x0), in_.y)).item();
    if (s == 0) return x0;
    const double as = sched_->alpha_bar(s);
    return add(mul(x0, std::sqrt(as)), mul(noise(x.shape()), std::sqrt(1.0 - as)));
  }

  const SamplerConfig& cfg_;
  const SamplerInputs& in_;
  const NoiseSchedule* sched_ = nullptr;
  Rng rng_, group_rng_;
  std::vector<int> taus_;
  Trajectory traj_;
};

SamplerInputs inputs(const ScoreModel& model, const MeasurementOperator* op, const Tensor& y, const MPEFunction* m,
                     const Autoencoder* ae) {
  SamplerInputs in;
  in.model = &model;
  in.op = op;
  in.y = y;
  in.mpe = m;
  in.ae = ae;
  return in;
}

}  // namespace

PsldLoss psld_objective(const Autoencoder& ae, const MeasurementOperator& op, const Tensor& y, const Tensor& z0,
                        const SamplerConfig& cfg) {
  const auto gnorm = cfg.effective_guidance_norm();
  Tensor decoded = ae.decode(z0);
  Tensor meas = reduce(sub(y, op.apply(decoded)), gnorm);
  Tensor total = mul(meas, cfg.eta_psld);
  if (cfg.gamma_psld > 0.0) {
    // A^T y stands in for A^T A x*_0; the unobserved part comes from D(z0|t).
    Tensor glued = add(op.adjoint(y), sub(decoded, op.adjoint_differentiable(op.apply(decoded))));
    total = add(total, mul(reduce(sub(z0, ae.encode(glued)), gnorm), cfg.gamma_psld));
  }
  return {meas, total};
}

Tensor resample_data_objective(const Autoencoder& ae, const MeasurementOperator& op, const Tensor& y,
                               const Tensor& z) {
  return mul(sq_norm(sub(y, op.apply(ae.decode(z)))), 0.5);
}

Tensor sitcom_measurement_objective(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                                    const Tensor& x, const Tensor& v, int t, double closeness) {
  Tensor loss = sq_norm(sub(op.apply(tweedie_x0(v, t, model)), y));
  if (closeness > 0.0) loss = add(loss, mul(sq_norm(sub(v, x)), closeness));
  return loss;
}

Trajectory run_sampler(const SamplerConfig& cfg, const SamplerInputs& in) {
  Chain chain(cfg, in);
  return chain.run();
}

Tensor ancestral_sample_batch(const ScoreModel& model, int steps, std::size_t n, std::uint64_t seed) {
  const auto& sched = model.schedule();
  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.validate(sched.steps());
  Shape shape = model.sample_shape();
  shape.insert(shape.begin(), n);
  Rng rng(seed);
  Tensor x = rng.normal_tensor(shape);
  const auto taus = step_subsequence(sched.steps(), steps);
  for (std::size_t i = taus.size(); i >= 1; --i) {
    const int t = taus[i - 1], s = i > 1 ? taus[i - 2] : 0;
    const auto st = ancestral_step(sched, t, s);
    Tensor x0 = tweedie_x0(x, t, model);
    x = add(mul(x, st.coef_xt), mul(x0, st.coef_x0));
    if (s > 0) x = add(x, mul(rng.normal_tensor(shape), st.sigma));
  }
  return x;
}

namespace {

SamplerConfig with(SamplerConfig cfg, Algorithm a) {
  cfg.algorithm = a;
  return cfg;
}

}  // namespace

Trajectory ancestral_sample(const ScoreModel& model, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::ancestral), inputs(model, nullptr, Tensor(), nullptr, nullptr));
}

Trajectory ddim_sample(const ScoreModel& model, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::ddim), inputs(model, nullptr, Tensor(), nullptr, nullptr));
}

Trajectory dps_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::dps), inputs(model, &op, y, nullptr, nullptr));
}

Trajectory equi_dps_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                           const MPEFunction& m, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equi_dps), inputs(model, &op, y, &m, nullptr));
}

Trajectory equi_psld_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                            const Tensor& y, const MPEFunction& m, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equi_psld), inputs(latent_model, &op, y, &m, &ae));
}

Trajectory equicon_psld_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                               const Tensor& y, const MPEFunction& m, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equicon_psld), inputs(latent_model, &op, y, &m, &ae));
}

Trajectory equi_resample_sample(const ScoreModel& latent_model, const Autoencoder& ae, const MeasurementOperator& op,
                                const Tensor& y, const MPEFunction& m, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equi_resample), inputs(latent_model, &op, y, &m, &ae));
}

Trajectory equicon_resample_sample(const ScoreModel& latent_model, const Autoencoder& ae,
                                   const MeasurementOperator& op, const Tensor& y, const MPEFunction& m,
                                   SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equicon_resample), inputs(latent_model, &op, y, &m, &ae));
}

Trajectory equi_sitcom_sample(const ScoreModel& model, const MeasurementOperator& op, const Tensor& y,
                              const MPEFunction& m, SamplerConfig cfg) {
  return run_sampler(with(cfg, Algorithm::equi_sitcom), inputs(model, &op, y, &m, nullptr));
}

}  // namespace equireg
