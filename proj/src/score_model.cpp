#include "equireg/score_model.hpp"

#include <cmath>
#include <numeric>

#include "equireg/autodiff.hpp"

namespace equireg {

ScoreModel::ScoreModel(NoiseSchedule schedule, Shape sample_shape)
    : schedule_(std::move(schedule)), sample_shape_(std::move(sample_shape)) {}

void ScoreModel::check_timestep(int t) const {
  if (t < 1 || t > schedule_.steps()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(schedule_.steps()));
  }
}

Tensor ScoreModel::epsilon(const Tensor& x, int t) const {
  return score(x, t) * (-std::sqrt(1.0 - schedule_.alpha_bar(t)));
}

AnalyticGmmScore::AnalyticGmmScore(GMMPrior prior, NoiseSchedule schedule, Shape sample_shape)
    : ScoreModel(std::move(schedule), sample_shape.empty() ? Shape{prior.dim()} : sample_shape),
      density_(std::make_shared<const GMMDensity>(std::move(prior))) {
  if (numel_of(this->sample_shape()) != density_->dim()) {
    throw ShapeError("AnalyticGmmScore: sample shape does not match mixture dimension");
  }
}

Tensor AnalyticGmmScore::score(const Tensor& x, int t) const {
  check_timestep(t);
  return gmm_score(density_, x, schedule().alpha_bar(t));
}

Bundle AnalyticGmmScore::to_bundle() const {
  Bundle b;
  b.manifest = {{"kind", "analytic-gmm"},
                {"prior", prior().to_json()},
                {"schedule", schedule().to_json()},
                {"sample_shape", sample_shape()}};
  return b;
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "arch") c.arch = it->get<std::string>();
    else if (k == "hidden") c.hidden = it->get<std::size_t>();
    else if (k == "hidden_layers") c.hidden_layers = it->get<std::size_t>();
    else if (k == "channels") c.channels = it->get<std::size_t>();
    else if (k == "conv_layers") c.conv_layers = it->get<std::size_t>();
    else if (k == "kernel") c.kernel = it->get<std::size_t>();
    else if (k == "embed_dim") c.embed_dim = it->get<std::size_t>();
    else if (k == "activation") c.activation = it->get<std::string>();
    else if (k == "steps") c.steps = it->get<int>();
    else if (k == "batch") c.batch = it->get<std::size_t>();
    else if (k == "lr") c.lr = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else throw ConfigError("denoiser config: unknown key '" + k + "'");
  }
  return c;
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"arch", arch},     {"hidden", hidden}, {"hidden_layers", hidden_layers}, {"channels", channels},
          {"conv_layers", conv_layers}, {"kernel", kernel}, {"embed_dim", embed_dim}, {"activation", activation},
          {"steps", steps},   {"batch", batch},   {"lr", lr},                        {"seed", seed}};
}

namespace {

// Broadcasts a per-channel row b [1,C] over a [B,C,H,W] activation via rank-one products.
Tensor channel_bias(const Tensor& b, std::size_t batch, std::size_t channels, std::size_t h, std::size_t w) {
  Tensor rows = matmul(Tensor::ones({batch, 1}), b);  // [B,C]
  Tensor spread = matmul(rows.reshape({batch * channels, 1}), Tensor::ones({1, h * w}));
  return spread.reshape({batch, channels, h, w});
}

Tensor embedding_rows(const std::vector<int>& timesteps, std::size_t dim) {
  std::vector<double> emb;
  emb.reserve(timesteps.size() * dim);
  for (int t : timesteps) {
    auto e = timestep_embedding(t, dim);
    emb.insert(emb.end(), e.begin(), e.end());
  }
  return Tensor({timesteps.size(), dim}, std::move(emb));
}

DenoiserScore::Arch parse_arch(const std::string& name) {
  if (name == "mlp") return DenoiserScore::Arch::mlp;
  if (name == "conv") return DenoiserScore::Arch::conv;
  throw ConfigError("unknown denoiser arch '" + name + "'");
}

}  // namespace

DenoiserScore::DenoiserScore(Arch arch, nlohmann::json layout, std::vector<Tensor> params, NoiseSchedule schedule,
                             Shape sample_shape)
    : ScoreModel(std::move(schedule), std::move(sample_shape)),
      arch_(arch),
      layout_(std::move(layout)),
      params_(std::move(params)) {
  freeze(params_);
}

std::vector<Tensor> DenoiserScore::init_params(Arch arch, const nlohmann::json& layout, Rng& rng) {
  std::vector<Tensor> p;
  const auto embed = layout.at("embed_dim").get<std::size_t>();
  if (arch == Arch::mlp) {
    const auto d = layout.at("input").get<std::size_t>();
    const auto h = layout.at("hidden").get<std::size_t>();
    const auto layers = layout.at("hidden_layers").get<std::size_t>();
    p.push_back(init_weight(d, h, rng));
    p.push_back(init_weight(embed, h, rng));
    p.push_back(Tensor::zeros({1, h}, true));
    for (std::size_t l = 1; l < layers; ++l) {
      p.push_back(init_weight(h, h, rng));
      p.push_back(Tensor::zeros({1, h}, true));
    }
    p.push_back(init_weight(h, d, rng));
    p.push_back(Tensor::zeros({1, d}, true));
  } else {
    const auto c = layout.at("channels").get<std::size_t>();
    const auto layers = layout.at("conv_layers").get<std::size_t>();
    const auto k = layout.at("kernel").get<std::size_t>();
    p.push_back(init_conv_kernel(c, 1, k, rng));
    p.push_back(init_weight(embed, c, rng));
    p.push_back(Tensor::zeros({1, c}, true));
    for (std::size_t l = 1; l + 1 < layers; ++l) {
      p.push_back(init_conv_kernel(c, c, k, rng));
      p.push_back(Tensor::zeros({1, c}, true));
    }
    auto last = init_conv_kernel(1, c, k, rng);
    auto scaled = last.to_vector();
    for (auto& v : scaled) v *= 0.1;
    p.push_back(Tensor(last.shape(), std::move(scaled), true));
  }
  return p;
}

Tensor DenoiserScore::predict_with(const std::vector<Tensor>& p, const Tensor& x_batch,
                                   const std::vector<int>& timesteps) const {
  const std::size_t d = numel_of(sample_shape());
  const std::size_t batch = x_batch.numel() / d;
  if (batch * d != x_batch.numel() || batch != timesteps.size()) {
    throw ShapeError("denoiser: batch " + shape_str(x_batch.shape()) + " does not match timesteps");
  }
  const auto act = parse_activation(layout_.at("activation").get<std::string>());
  const auto embed = layout_.at("embed_dim").get<std::size_t>();
  Tensor emb = embedding_rows(timesteps, embed);
  if (arch_ == Arch::mlp) {
    const auto layers = layout_.at("hidden_layers").get<std::size_t>();
    Tensor x = x_batch.reshape({batch, d});
    Tensor h = activate(add(matmul(x, p[0]), dense(emb, p[1], p[2])), act);
    std::size_t i = 3;
    for (std::size_t l = 1; l < layers; ++l, i += 2) h = activate(dense(h, p[i], p[i + 1]), act);
    return dense(h, p[i], p[i + 1]).reshape(x_batch.shape());
  }
  const auto c = layout_.at("channels").get<std::size_t>();
  const auto layers = layout_.at("conv_layers").get<std::size_t>();
  const auto& s = sample_shape();
  const std::size_t hgt = s[s.size() - 2], wid = s[s.size() - 1];
  Tensor x = x_batch.reshape({batch, 1, hgt, wid});
  Tensor tb = dense(emb, p[1], p[2]);  // [B,C]
  Tensor time_map =
      matmul(tb.reshape({batch * c, 1}), Tensor::ones({1, hgt * wid})).reshape({batch, c, hgt, wid});
  Tensor h = activate(add(conv2d(x, p[0], Padding::zero), time_map), act);
  std::size_t i = 3;
  for (std::size_t l = 1; l + 1 < layers; ++l, i += 2) {
    h = activate(add(conv2d(h, p[i], Padding::zero), channel_bias(p[i + 1], batch, c, hgt, wid)), act);
  }
  return conv2d(h, p[i], Padding::zero).reshape(x_batch.shape());
}

Tensor DenoiserScore::predict(const Tensor& x_batch, const std::vector<int>& timesteps) const {
  return predict_with(params_, x_batch, timesteps);
}

Tensor DenoiserScore::epsilon(const Tensor& x, int t) const {
  check_timestep(t);
  const std::size_t batch = x.numel() / numel_of(sample_shape());
  return predict(x, std::vector<int>(batch, t));
}

Tensor DenoiserScore::score(const Tensor& x, int t) const {
  return epsilon(x, t) * (-1.0 / std::sqrt(1.0 - schedule().alpha_bar(t)));
}

Bundle DenoiserScore::to_bundle() const {
  Bundle b;
  b.manifest = {{"kind", "trained-denoiser"},
                {"arch", arch_ == Arch::mlp ? "mlp" : "conv"},
                {"layout", layout_},
                {"schedule", schedule().to_json()},
                {"sample_shape", sample_shape()},
                {"trained", trained},
                {"initial_loss", initial_loss},
                {"final_loss", final_loss},
                {"train_steps", train_steps}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : params_) shapes.push_back(p.shape());
  b.manifest["layer_shapes"] = shapes;
  b.tensors = params_;
  return b;
}

std::shared_ptr<DenoiserScore> train_denoiser(const std::vector<Tensor>& dataset, const NoiseSchedule& sched,
                                              const DenoiserConfig& cfg) {
  if (dataset.empty()) throw ConfigError("train_denoiser: empty dataset");
  const Shape shape = dataset.front().shape();
  for (const auto& x : dataset) {
    if (x.shape() != shape) throw ShapeError("train_denoiser: dataset shapes are not homogeneous");
  }
  const std::size_t d = numel_of(shape);
  std::string arch_name = cfg.arch;
  if (arch_name == "auto") arch_name = shape.size() >= 2 ? "conv" : "mlp";
  const auto arch = parse_arch(arch_name);
  if (arch == DenoiserScore::Arch::conv && shape.size() < 2) throw ConfigError("conv denoiser needs grid samples");

  nlohmann::json layout = {{"embed_dim", cfg.embed_dim}, {"activation", cfg.activation}};
  if (arch == DenoiserScore::Arch::mlp) {
    layout["input"] = d;
    layout["hidden"] = cfg.hidden;
    layout["hidden_layers"] = cfg.hidden_layers;
  } else {
    layout["channels"] = cfg.channels;
    layout["conv_layers"] = cfg.conv_layers;
    layout["kernel"] = cfg.kernel;
  }
  Rng rng(cfg.seed);
  auto params = DenoiserScore::init_params(arch, layout, rng);
  auto model = std::make_shared<DenoiserScore>(arch, layout, params, sched, shape);
  if (cfg.steps <= 0) return model;

  make_trainable(params);
  Adam adam(cfg.lr);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  Shape batch_shape{cfg.batch};
  batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> ts(cfg.batch);
    std::vector<double> xt(cfg.batch * d), eps(cfg.batch * d);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& x0 = dataset[rng.index(dataset.size())].data();
      ts[b] = static_cast<int>(rng.index(static_cast<std::size_t>(sched.steps()))) + 1;
      const double ab = sched.alpha_bar(ts[b]);
      for (std::size_t i = 0; i < d; ++i) {
        eps[b * d + i] = rng.normal();
        xt[b * d + i] = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * eps[b * d + i];
      }
    }
    Tensor target(batch_shape, std::move(eps));
    Tensor loss;
    try {
      Tensor pred = model->predict_with(params, Tensor(batch_shape, std::move(xt)), ts);
      loss = mean(square(sub(pred, target)));
      backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("train_denoiser diverged at step " + std::to_string(step) + ": " + e.what());
    }
    losses.push_back(loss.item());
    adam.step(params);
  }
  // Initial loss: the first few minibatches of the untrained net. Final loss:
  // the last 5% of steps, which smooths minibatch noise.
  auto avg = [&](std::size_t from, std::size_t count) {
    return std::accumulate(losses.begin() + static_cast<long>(from),
                           losses.begin() + static_cast<long>(from + count), 0.0) /
           static_cast<double>(count);
  };
  const std::size_t head = std::min<std::size_t>(10, losses.size());
  const std::size_t tail = std::max<std::size_t>(1, losses.size() / 20);
  auto trained = std::make_shared<DenoiserScore>(arch, layout, params, sched, shape);
  trained->trained = true;
  trained->initial_loss = avg(0, head);
  trained->final_loss = avg(losses.size() - tail, tail);
  trained->train_steps = cfg.steps;
  return trained;
}

Tensor tweedie_x0(const Tensor& x_t, int t, const ScoreModel& model) {
  const double ab = model.schedule().alpha_bar(t);
  Tensor s = model.score(x_t, t);
  return add(x_t, mul(s, 1.0 - ab)) * (1.0 / std::sqrt(ab));
}

void save_score_model(const std::filesystem::path& path, const ScoreModel& model) {
  save_bundle(path, model.to_bundle());
}

std::shared_ptr<ScoreModel> score_model_from_bundle(const Bundle& bundle) {
  const auto& m = bundle.manifest;
  try {
    const auto kind = m.at("kind").get<std::string>();
    auto sched = NoiseSchedule::from_json(m.at("schedule"));
    auto shape = m.at("sample_shape").get<Shape>();
    if (kind == "analytic-gmm") {
      return std::make_shared<AnalyticGmmScore>(GMMPrior::from_json(m.at("prior")), sched, shape);
    }
    if (kind == "trained-denoiser") {
      auto arch = parse_arch(m.at("arch").get<std::string>());
      auto model = std::make_shared<DenoiserScore>(arch, m.at("layout"), bundle.tensors, sched, shape);
      model->trained = m.at("trained").get<bool>();
      model->initial_loss = m.at("initial_loss").get<double>();
      model->final_loss = m.at("final_loss").get<double>();
      model->train_steps = m.at("train_steps").get<int>();
      return model;
    }
    throw IoError("score model checkpoint: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("score model checkpoint: ") + e.what());
  }
}

std::shared_ptr<ScoreModel> load_score_model(const std::filesystem::path& path) {
  return score_model_from_bundle(load_bundle(path));
}

}  // namespace equireg
