#include "equireg/nn.hpp"

#include <cmath>

namespace equireg {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  return x;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t rows = x.shape()[0];
  Tensor xw = matmul(x, weight);
  Tensor spread = matmul(Tensor::ones({rows, 1}), bias);
  return add(xw, spread);
}

Tensor init_weight(std::size_t in, std::size_t out, Rng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = scale * rng.normal();
  return Tensor({in, out}, std::move(w), true);
}

Tensor init_conv_kernel(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  std::vector<double> w(cout * cin * k * k);
  for (auto& v : w) v = scale * rng.normal();
  return Tensor({cout, cin, k, k}, std::move(w), true);
}

std::vector<double> timestep_embedding(int t, std::size_t dim) {
  std::vector<double> emb(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    emb[i] = std::sin(t * freq);
    emb[half + i] = std::cos(t * freq);
  }
  return emb;
}

Mlp::Mlp(std::vector<std::size_t> widths, Activation act, Rng& rng) : widths_(std::move(widths)), act_(act) {
  if (widths_.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    params_.push_back(init_weight(widths_[l], widths_[l + 1], rng));
    params_.push_back(Tensor::zeros({1, widths_[l + 1]}, true));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  if (x.dim() != 2 || x.shape()[1] != widths_.front()) {
    if (x.numel() % widths_.front() != 0) {
      throw ShapeError("Mlp: input " + shape_str(x.shape()) + " incompatible with width " +
                       std::to_string(widths_.front()));
    }
    h = x.reshape({x.numel() / widths_.front(), widths_.front()});
  }
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(h, params_[2 * l], params_[2 * l + 1]);
    if (l + 1 < layers) h = activate(h, act_);
  }
  return h;
}

nlohmann::json Mlp::layout() const { return {{"widths", widths_}, {"activation", activation_name(act_)}}; }

Mlp Mlp::from_layout(const nlohmann::json& layout, std::vector<Tensor> params) {
  Mlp m;
  m.widths_ = layout.at("widths").get<std::vector<std::size_t>>();
  m.act_ = parse_activation(layout.at("activation").get<std::string>());
  if (params.size() != 2 * (m.widths_.size() - 1)) throw ConfigError("Mlp: parameter count mismatch");
  for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
    if (params[2 * l].shape() != Shape{m.widths_[l], m.widths_[l + 1]} ||
        params[2 * l + 1].shape() != Shape{1, m.widths_[l + 1]}) {
      throw ConfigError("Mlp: parameter shape mismatch at layer " + std::to_string(l));
    }
  }
  m.params_ = std::move(params);
  return m;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void Adam::step(std::vector<Tensor>& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].numel(), 0.0);
      v_[i].assign(params[i].numel(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto values = p.to_vector();
    if (p.has_grad()) {
      auto g = p.grad();
      for (std::size_t j = 0; j < values.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        values[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
    p = Tensor(p.shape(), std::move(values), true);
  }
}

void make_trainable(std::vector<Tensor>& params) {
  for (auto& p : params) p = p.detach(true);
}

void freeze(std::vector<Tensor>& params) {
  for (auto& p : params) p = p.detach(false);
}

}  // namespace equireg
