#include "equireg/mpe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "equireg/autodiff.hpp"
#include "equireg/error.hpp"
#include "equireg/ops.hpp"

namespace equireg {

LossNorm parse_loss_norm(const std::string& name) {
  if (name == "squared-l2") return LossNorm::squared_l2;
  if (name == "l2") return LossNorm::l2;
  throw ConfigError("unknown norm '" + name + "' (expected squared-l2 or l2)");
}

const char* loss_norm_name(LossNorm n) { return n == LossNorm::squared_l2 ? "squared-l2" : "l2"; }

void EquiLossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("equi lambda must be >= 0");
  if (period < 1) throw ConfigError("equi period must be >= 1");
  if (!(early_stop >= 0.0 && early_stop < 1.0)) throw ConfigError("equi early_stop must lie in [0, 1)");
}

std::size_t EquiLossConfig::active_steps(std::size_t n) const {
  // The small offset keeps products such as 0.3 * 10 from flooring to 2.
  const auto stopped = static_cast<std::size_t>(std::floor(early_stop * static_cast<double>(n) + 1e-9));
  return n - std::min(stopped, n);
}

bool EquiLossConfig::applies(std::size_t i, std::size_t n) const {
  if (lambda == 0.0) return false;
  return i < active_steps(n) && i % static_cast<std::size_t>(period) == 0;
}

std::size_t EquiLossConfig::evaluations(std::size_t n) const {
  if (lambda == 0.0) return 0;
  const std::size_t active = active_steps(n), p = static_cast<std::size_t>(period);
  return (active + p - 1) / p;
}

EquiLossConfig EquiLossConfig::from_json(const nlohmann::json& j) {
  EquiLossConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "lambda") c.lambda = it->get<double>();
      else if (k == "early_stop") c.early_stop = it->get<double>();
      else if (k == "period") c.period = it->get<int>();
      else if (k == "norm") c.norm = parse_loss_norm(it->get<std::string>());
      else if (k == "element_policy") {
        const auto p = it->get<std::string>();
        if (p == "random-per-call") c.element_policy = ElementPolicy::random_per_call;
        else if (p == "fixed") c.element_policy = ElementPolicy::fixed;
        else throw ConfigError("unknown element_policy '" + p + "'");
      } else if (k == "fixed_element") c.fixed_element = it->get<std::size_t>();
      else throw ConfigError("equi config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("equi config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json EquiLossConfig::to_json() const {
  return {{"lambda", lambda},
          {"early_stop", early_stop},
          {"period", period},
          {"norm", loss_norm_name(norm)},
          {"element_policy", element_policy == ElementPolicy::fixed ? "fixed" : "random-per-call"},
          {"fixed_element", fixed_element}};
}

Autoencoder::Autoencoder(Shape data_shape, Mlp encoder, Mlp decoder)
    : data_shape_(std::move(data_shape)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  const std::size_t d = numel_of(data_shape_);
  if (encoder_.widths().front() != d || decoder_.widths().back() != d) {
    throw ShapeError("autoencoder: encoder/decoder widths do not match data shape " + shape_str(data_shape_));
  }
  if (decoder_.widths().front() != latent_dim()) throw ShapeError("autoencoder: latent widths disagree");
  if (latent_dim() >= d) {
    throw ConfigError("autoencoder: latent dimension " + std::to_string(latent_dim()) +
                      " must be smaller than the data dimension " + std::to_string(d));
  }
}

std::size_t Autoencoder::batch_of(const Tensor& t, const Shape& item, const char* what) const {
  if (t.shape() == item) return 0;
  if (t.dim() == item.size() + 1 && std::equal(item.begin(), item.end(), t.shape().begin() + 1)) {
    return t.shape()[0];
  }
  throw ShapeError(std::string("autoencoder ") + what + ": expected " + shape_str(item) + " or a batch, got " +
                   shape_str(t.shape()));
}

Tensor Autoencoder::encode(const Tensor& x) const {
  const std::size_t b = batch_of(x, data_shape_, "encode");
  Tensor z = encoder_.forward(x);
  return b == 0 ? z.reshape({latent_dim()}) : z;
}

Tensor Autoencoder::decode(const Tensor& z) const {
  const std::size_t b = batch_of(z, latent_shape(), "decode");
  Tensor x = decoder_.forward(z);
  Shape out = data_shape_;
  if (b != 0) out.insert(out.begin(), b);
  return x.reshape(out);
}

Bundle Autoencoder::to_bundle() const {
  Bundle b;
  b.manifest = {{"kind", "autoencoder"},
                {"data_shape", data_shape_},
                {"encoder", encoder_.layout()},
                {"decoder", decoder_.layout()},
                {"augmented", augmented},
                {"holdout_mse", holdout_mse},
                {"data_variance", data_variance},
                {"tolerance", tolerance},
                {"within_tolerance", within_tolerance()},
                {"encoder_tensors", encoder_.params().size()}};
  b.tensors = encoder_.params();
  b.tensors.insert(b.tensors.end(), decoder_.params().begin(), decoder_.params().end());
  return b;
}

std::shared_ptr<Autoencoder> Autoencoder::from_bundle(const Bundle& bundle) {
  const auto& m = bundle.manifest;
  try {
    if (m.at("kind").get<std::string>() != "autoencoder") throw IoError("checkpoint is not an autoencoder");
    const auto ne = m.at("encoder_tensors").get<std::size_t>();
    if (ne > bundle.tensors.size()) throw IoError("autoencoder checkpoint: tensor count mismatch");
    std::vector<Tensor> ep(bundle.tensors.begin(), bundle.tensors.begin() + static_cast<long>(ne));
    std::vector<Tensor> dp(bundle.tensors.begin() + static_cast<long>(ne), bundle.tensors.end());
    auto ae = std::make_shared<Autoencoder>(m.at("data_shape").get<Shape>(), Mlp::from_layout(m.at("encoder"), ep),
                                            Mlp::from_layout(m.at("decoder"), dp));
    ae->augmented = m.at("augmented").get<bool>();
    ae->holdout_mse = m.at("holdout_mse").get<double>();
    ae->data_variance = m.at("data_variance").get<double>();
    ae->tolerance = m.at("tolerance").get<double>();
    return ae;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("autoencoder checkpoint: ") + e.what());
  }
}

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae) { save_bundle(path, ae.to_bundle()); }

std::shared_ptr<Autoencoder> load_autoencoder(const std::filesystem::path& path) {
  return Autoencoder::from_bundle(load_bundle(path));
}

MpeRole parse_mpe_role(const std::string& name) {
  if (name == "encoder") return MpeRole::encoder;
  if (name == "decoder") return MpeRole::decoder;
  if (name == "autoencoder") return MpeRole::autoencoder;
  throw ConfigError("unknown MPE role '" + name + "' (expected encoder, decoder or autoencoder)");
}

const char* mpe_role_name(MpeRole r) {
  switch (r) {
    case MpeRole::encoder: return "encoder";
    case MpeRole::decoder: return "decoder";
    case MpeRole::autoencoder: return "autoencoder";
  }
  return "?";
}

MPEFunction::MPEFunction(Map f, std::optional<Map> h, GroupAction action)
    : f_(std::move(f)), h_(std::move(h)), action_(std::move(action)) {}

MPEFunction MPEFunction::from_autoencoder(std::shared_ptr<const Autoencoder> ae, MpeRole role,
                                         const nlohmann::json& group) {
  auto enc = [ae](const Tensor& x) { return ae->encode(x); };
  auto dec = [ae](const Tensor& z) { return ae->decode(z); };
  switch (role) {
    case MpeRole::encoder:
      return MPEFunction(enc, dec, GroupAction::from_config(group, ae->data_shape(), ae->latent_shape()));
    case MpeRole::decoder:
      return MPEFunction(dec, enc, GroupAction::from_config(group, ae->latent_shape(), ae->data_shape()));
    case MpeRole::autoencoder:
      return MPEFunction([ae](const Tensor& x) { return ae->reconstruct(x); }, std::nullopt,
                         GroupAction::from_config(group, ae->data_shape()));
  }
  throw ConfigError("unknown MPE role");
}

Tensor MPEFunction::h(const Tensor& x) const {
  if (!h_) throw ConfigError("this MPE function has no paired inverse h");
  return (*h_)(x);
}

namespace {

Tensor reduce_norm(const Tensor& diff, LossNorm norm) {
  return norm == LossNorm::squared_l2 ? sq_norm(diff) : l2_norm(diff);
}

GroupAction::Element draw(const MPEFunction& m, Rng& rng, const EquiLossConfig& cfg) {
  if (cfg.element_policy == ElementPolicy::fixed) {
    if (cfg.fixed_element >= m.action().size()) throw ConfigError("fixed group element out of range");
    return cfg.fixed_element;
  }
  return m.action().random_element(rng);
}

}  // namespace

Tensor equi_loss_at(const MPEFunction& m, const Tensor& x0t, GroupAction::Element g, LossNorm norm) {
  const auto& a = m.action();
  Tensor lhs = a.apply_codomain(g, m.f(x0t));
  Tensor rhs = m.f(a.apply_domain(g, x0t));
  if (lhs.shape() != rhs.shape()) {
    throw ShapeError("equivariance error: S_g(f(z)) is " + shape_str(lhs.shape()) + " but f(T_g(z)) is " +
                     shape_str(rhs.shape()));
  }
  return reduce_norm(sub(lhs, rhs), norm);
}

double equi_error(const MPEFunction& m, GroupAction::Element g, const Tensor& z, LossNorm norm) {
  return equi_loss_at(m, z.detach(), g, norm).item();
}

Tensor equi_loss(const MPEFunction& m, const Tensor& x0t, Rng& rng, const EquiLossConfig& cfg,
                 GroupAction::Element* drawn) {
  const auto g = draw(m, rng, cfg);
  if (drawn) *drawn = g;
  return equi_loss_at(m, x0t, g, cfg.norm);
}

Tensor equicon_loss_at(const MPEFunction& m, const Tensor& z0t, GroupAction::Element g, LossNorm norm) {
  const auto& a = m.action();
  Tensor round = m.h(a.apply_codomain(a.inverse(g), m.f(a.apply_domain(g, z0t))));
  if (round.shape() != z0t.shape()) {
    throw ShapeError("equicon loss: round trip returns " + shape_str(round.shape()) + " for input " +
                     shape_str(z0t.shape()));
  }
  return reduce_norm(sub(z0t, round), norm);
}

Tensor equicon_loss(const MPEFunction& m, const Tensor& z0t, Rng& rng, const EquiLossConfig& cfg,
                    GroupAction::Element* drawn) {
  if (!m.has_inverse()) throw ConfigError("equicon loss needs an MPE function with a paired inverse h");
  const auto g = draw(m, rng, cfg);
  if (drawn) *drawn = g;
  return equicon_loss_at(m, z0t, g, cfg.norm);
}

AutoencoderConfig AutoencoderConfig::from_json(const nlohmann::json& j) {
  AutoencoderConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "latent") c.latent = it->get<std::size_t>();
      else if (k == "hidden") c.hidden = it->get<std::size_t>();
      else if (k == "hidden_layers") c.hidden_layers = it->get<std::size_t>();
      else if (k == "activation") c.activation = it->get<std::string>();
      else if (k == "steps") c.steps = it->get<int>();
      else if (k == "batch") c.batch = it->get<std::size_t>();
      else if (k == "lr") c.lr = it->get<double>();
      else if (k == "augment") c.augment = it->get<bool>();
      else if (k == "identity_prob") c.identity_prob = it->get<double>();
      else if (k == "holdout_fraction") c.holdout_fraction = it->get<double>();
      else if (k == "tolerance") c.tolerance = it->get<double>();
      else if (k == "seed") c.seed = it->get<std::uint64_t>();
      else throw ConfigError("autoencoder config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("autoencoder config: ") + e.what());
  }
  return c;
}

nlohmann::json AutoencoderConfig::to_json() const {
  return {{"latent", latent},   {"hidden", hidden},   {"hidden_layers", hidden_layers},
          {"activation", activation}, {"steps", steps}, {"batch", batch},
          {"lr", lr},           {"augment", augment}, {"identity_prob", identity_prob},
          {"holdout_fraction", holdout_fraction}, {"tolerance", tolerance}, {"seed", seed}};
}

std::shared_ptr<Autoencoder> train_autoencoder_augmented(const std::vector<Tensor>& dataset,
                                                         const GroupAction& action, const AutoencoderConfig& cfg) {
  if (dataset.empty()) throw ConfigError("train_autoencoder_augmented: empty dataset");
  const Shape shape = dataset.front().shape();
  for (const auto& x : dataset) {
    if (x.shape() != shape) throw ShapeError("train_autoencoder_augmented: dataset shapes are not homogeneous");
  }
  if (cfg.augment && action.domain_shape() != shape) {
    throw ShapeError("augmentation group acts on " + shape_str(action.domain_shape()) + ", data is " +
                     shape_str(shape));
  }
  if (!(cfg.identity_prob >= 0.0 && cfg.identity_prob <= 1.0)) throw ConfigError("identity_prob must lie in [0,1]");
  const std::size_t d = numel_of(shape);
  if (cfg.latent >= d) {
    throw ConfigError("autoencoder latent dimension must be smaller than the data dimension");
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(dataset.size())));
  if (dataset.size() > 1) n_hold = std::clamp<std::size_t>(n_hold, 1, dataset.size() - 1);
  else n_hold = 0;
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_hold), order.end());
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<long>(n_hold));
  if (hold.empty()) hold = train;

  const auto act = parse_activation(cfg.activation);
  std::vector<std::size_t> ew{d}, dw{cfg.latent};
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) {
    ew.push_back(cfg.hidden);
    dw.push_back(cfg.hidden);
  }
  ew.push_back(cfg.latent);
  dw.push_back(d);
  Mlp enc(ew, act, rng), dec(dw, act, rng);
  const std::size_t ne = enc.params().size();

  std::vector<Tensor> params = enc.params();
  params.insert(params.end(), dec.params().begin(), dec.params().end());
  make_trainable(params);
  Adam adam(cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> xb(cfg.batch * d);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& x = dataset[train[rng.index(train.size())]].data();
      GroupAction::Element g = 0;
      if (cfg.augment && action.size() > 1 && !rng.bernoulli(cfg.identity_prob)) g = action.random_element(rng);
      if (g == 0) {
        std::copy(x.begin(), x.end(), xb.begin() + static_cast<long>(b * d));
        continue;
      }
      const auto& p = action.domain_perm(g);
      for (std::size_t i = 0; i < d; ++i) xb[b * d + i] = p.sign[i] * x[p.index[i]];
    }
    Tensor batch({cfg.batch, d}, std::move(xb));
    std::vector<Tensor> ep(params.begin(), params.begin() + static_cast<long>(ne));
    std::vector<Tensor> dp(params.begin() + static_cast<long>(ne), params.end());
    try {
      Tensor out = Mlp::from_layout(dec.layout(), dp).forward(Mlp::from_layout(enc.layout(), ep).forward(batch));
      backward(mean(square(sub(out, batch))));
    } catch (const NumericError& e) {
      throw NumericError("autoencoder training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    adam.step(params);
  }
  freeze(params);
  std::vector<Tensor> ep(params.begin(), params.begin() + static_cast<long>(ne));
  std::vector<Tensor> dp(params.begin() + static_cast<long>(ne), params.end());
  auto ae = std::make_shared<Autoencoder>(shape, Mlp::from_layout(enc.layout(), ep), Mlp::from_layout(dec.layout(), dp));
  ae->augmented = cfg.augment;
  ae->tolerance = cfg.tolerance;

  // Held-out reconstruction MSE against the mean per-coordinate variance.
  std::vector<double> xs(hold.size() * d);
  for (std::size_t b = 0; b < hold.size(); ++b) {
    std::copy(dataset[hold[b]].data().begin(), dataset[hold[b]].data().end(), xs.begin() + static_cast<long>(b * d));
  }
  Shape hshape = shape;
  hshape.insert(hshape.begin(), hold.size());
  Tensor hx(hshape, xs);
  auto recon = ae->reconstruct(hx).to_vector();
  double mse = 0.0, var = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mse += (recon[i] - xs[i]) * (recon[i] - xs[i]);
  for (std::size_t i = 0; i < d; ++i) {
    double mu = 0.0;
    for (std::size_t b = 0; b < hold.size(); ++b) mu += xs[b * d + i];
    mu /= static_cast<double>(hold.size());
    for (std::size_t b = 0; b < hold.size(); ++b) var += (xs[b * d + i] - mu) * (xs[b * d + i] - mu);
  }
  ae->holdout_mse = mse / static_cast<double>(xs.size());
  ae->data_variance = var / static_cast<double>(xs.size());
  return ae;
}

std::vector<MpeSweepRow> mpe_sweep(const MPEFunction& m, const std::vector<Tensor>& dataset,
                                   const std::vector<double>& noise_levels, Rng& rng, LossNorm norm) {
  if (dataset.empty()) throw ConfigError("mpe_sweep: empty dataset");
  if (noise_levels.empty() || noise_levels.front() != 0.0) {
    throw ConfigError("mpe_sweep: noise levels must start at 0");
  }
  if (!std::is_sorted(noise_levels.begin(), noise_levels.end())) {
    throw ConfigError("mpe_sweep: noise levels must be sorted ascending");
  }
  const auto& a = m.action();
  std::vector<MpeSweepRow> rows;
  for (double sigma : noise_levels) {
    std::vector<double> errs;
    for (const auto& x : dataset) {
      Tensor z = x;
      if (sigma > 0.0) {
        auto v = x.to_vector();
        for (double& e : v) e += sigma * rng.normal();
        z = Tensor(x.shape(), std::move(v));
      }
      for (GroupAction::Element g = 1; g < a.size(); ++g) errs.push_back(equi_error(m, g, z, norm));
    }
    MpeSweepRow r;
    r.sigma = sigma;
    r.n = errs.size();
    if (!errs.empty()) {
      r.mean = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
      double ss = 0.0;
      for (double e : errs) ss += (e - r.mean) * (e - r.mean);
      r.std = errs.size() > 1 ? std::sqrt(ss / static_cast<double>(errs.size() - 1)) : 0.0;
    }
    rows.push_back(r);
  }
  return rows;
}

std::string mpe_sweep_csv(const std::vector<MpeSweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "sigma,mean,std,n\n";
  for (const auto& r : rows) out << r.sigma << ',' << r.mean << ',' << r.std << ',' << r.n << '\n';
  return out.str();
}

}  // namespace equireg
