#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/ops.hpp"
#include "equireg/rng.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

enum class Activation { relu, tanh, sigmoid };

Activation parse_activation(const std::string& name);
const char* activation_name(Activation a);
Tensor activate(const Tensor& x, Activation a);

/// x [B,in] * W [in,out] + b, with the bias broadcast over rows by a
/// rank-one product (ones[B,1] * b[1,out]).
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Scaled-normal initialisation for a [in,out] weight matrix.
Tensor init_weight(std::size_t in, std::size_t out, Rng& rng);
Tensor init_conv_kernel(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng);

/// Sinusoidal features of an integer timestep, shape [1, dim].
std::vector<double> timestep_embedding(int t, std::size_t dim);

/// Fully connected stack; hidden layers use `act`, the last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, Activation act, Rng& rng);

  /// x is [B,in] or any tensor with `in` elements (treated as one row).
  Tensor forward(const Tensor& x) const;

  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return act_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }

  nlohmann::json layout() const;
  static Mlp from_layout(const nlohmann::json& layout, std::vector<Tensor> params);

 private:
  std::vector<std::size_t> widths_;
  Activation act_ = Activation::relu;
  std::vector<Tensor> params_;  // weight, bias per layer
};

/// Adam over a parameter list. Tensors are immutable, so step() replaces
/// each parameter with a fresh leaf holding the updated values.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<Tensor>& params);
  void reset();

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Marks every parameter as a fresh leaf requiring gradients.
void make_trainable(std::vector<Tensor>& params);
/// Detaches every parameter so inference never touches parameter gradients.
void freeze(std::vector<Tensor>& params);

}  // namespace equireg
