#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/groups.hpp"
#include "equireg/nn.hpp"
#include "equireg/rng.hpp"
#include "equireg/serialize.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

enum class LossNorm { squared_l2, l2 };
enum class ElementPolicy { random_per_call, fixed };

LossNorm parse_loss_norm(const std::string& name);
const char* loss_norm_name(LossNorm n);

/// Weighting and scheduling of the equivariance regulariser inside a sampler.
struct EquiLossConfig {
  double lambda = 0.0;
  /// Fraction of the final steps on which lambda is forced to 0.
  double early_stop = 0.1;
  int period = 1;
  LossNorm norm = LossNorm::squared_l2;
  ElementPolicy element_policy = ElementPolicy::random_per_call;
  std::size_t fixed_element = 1;

  void validate() const;
  /// Steps 0..n-1 in sampling order; the last floor(early_stop * n) are inactive.
  std::size_t active_steps(std::size_t n) const;
  /// Whether the regulariser is evaluated on step i of n.
  bool applies(std::size_t i, std::size_t n) const;
  /// Number of regulariser evaluations over a chain of n steps.
  std::size_t evaluations(std::size_t n) const;

  static EquiLossConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// MLP encoder E: X -> R^k and decoder D: R^k -> X over a fixed data shape.
/// Both accept one item or a batch along a leading axis.
class Autoencoder {
 public:
  Autoencoder(Shape data_shape, Mlp encoder, Mlp decoder);

  const Shape& data_shape() const { return data_shape_; }
  Shape latent_shape() const { return {latent_dim()}; }
  std::size_t latent_dim() const { return encoder_.widths().back(); }

  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;
  Tensor reconstruct(const Tensor& x) const { return decode(encode(x)); }

  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  // Training diagnostics, stored with the checkpoint.
  bool augmented = false;
  double holdout_mse = 0.0;
  double data_variance = 0.0;
  double tolerance = 0.1;
  bool within_tolerance() const { return holdout_mse <= tolerance * data_variance; }

  Bundle to_bundle() const;
  static std::shared_ptr<Autoencoder> from_bundle(const Bundle& bundle);

 private:
  std::size_t batch_of(const Tensor& t, const Shape& item, const char* what) const;

  Shape data_shape_;
  Mlp encoder_, decoder_;
};

void save_autoencoder(const std::filesystem::path& path, const Autoencoder& ae);
std::shared_ptr<Autoencoder> load_autoencoder(const std::filesystem::path& path);

enum class MpeRole { encoder, decoder, autoencoder };
MpeRole parse_mpe_role(const std::string& name);
const char* mpe_role_name(MpeRole r);

/// f with the paired actions T_g on its input space and S_g on its output
/// space, plus an optional map h back from the output space.
class MPEFunction {
 public:
  using Map = std::function<Tensor(const Tensor&)>;

  MPEFunction(Map f, std::optional<Map> h, GroupAction action);

  /// f = E (h = D), f = D (h = E) or f = D o E (no h). `group` is a group
  /// config; it is instantiated on f's input and output shapes.
  static MPEFunction from_autoencoder(std::shared_ptr<const Autoencoder> ae, MpeRole role,
                                      const nlohmann::json& group);

  Tensor f(const Tensor& z) const { return f_(z); }
  bool has_inverse() const { return h_.has_value(); }
  Tensor h(const Tensor& x) const;
  const GroupAction& action() const { return action_; }

 private:
  Map f_;
  std::optional<Map> h_;
  GroupAction action_;
};

/// ||S_g(f(z)) - f(T_g(z))|| (or its square).
double equi_error(const MPEFunction& m, GroupAction::Element g, const Tensor& z, LossNorm norm = LossNorm::l2);

/// Differentiable equivariance loss at x0t with g drawn per the config policy.
/// The drawn element is written to `drawn` when non-null.
Tensor equi_loss(const MPEFunction& m, const Tensor& x0t, Rng& rng, const EquiLossConfig& cfg,
                 GroupAction::Element* drawn = nullptr);
/// Same loss with an explicit element.
Tensor equi_loss_at(const MPEFunction& m, const Tensor& x0t, GroupAction::Element g, LossNorm norm);

/// ||z - h(S_g^{-1}(f(T_g(z))))||, differentiable; needs h.
Tensor equicon_loss(const MPEFunction& m, const Tensor& z0t, Rng& rng, const EquiLossConfig& cfg,
                    GroupAction::Element* drawn = nullptr);
Tensor equicon_loss_at(const MPEFunction& m, const Tensor& z0t, GroupAction::Element g, LossNorm norm);

struct AutoencoderConfig {
  std::size_t latent = 16;
  std::size_t hidden = 128;
  std::size_t hidden_layers = 1;
  std::string activation = "tanh";
  int steps = 2000;
  std::size_t batch = 64;
  double lr = 1e-3;
  bool augment = true;
  /// Probability that a batch element is left untransformed.
  double identity_prob = 0.5;
  double holdout_fraction = 0.1;
  double tolerance = 0.1;
  std::uint64_t seed = 0;

  static AutoencoderConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Trains E, D on reconstruction with each batch element transformed by a
/// group element (identity with probability identity_prob, otherwise uniform
/// over the rest). `action` acts on the data shape. Held-out reconstruction
/// error is recorded on the result.
std::shared_ptr<Autoencoder> train_autoencoder_augmented(const std::vector<Tensor>& dataset,
                                                         const GroupAction& action, const AutoencoderConfig& cfg);

struct MpeSweepRow {
  double sigma = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// For each sigma, perturbs every datum with N(0, sigma^2) noise and averages
/// equi_error over data x non-identity group elements.
std::vector<MpeSweepRow> mpe_sweep(const MPEFunction& m, const std::vector<Tensor>& dataset,
                                   const std::vector<double>& noise_levels, Rng& rng, LossNorm norm = LossNorm::l2);

std::string mpe_sweep_csv(const std::vector<MpeSweepRow>& rows);

}  // namespace equireg
