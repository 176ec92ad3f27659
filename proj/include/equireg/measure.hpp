#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "equireg/ops.hpp"
#include "equireg/rng.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

/// Forward measurement map A plus the additive noise level sigma_y.
///
/// Masks keep the input shape and zero the unobserved entries. coordinate-mask
/// instead returns only the observed coordinates of a vector.
class MeasurementOperator {
 public:
  enum class Kind {
    identity,
    box_inpaint,
    random_inpaint,
    gaussian_blur,
    motion_blur,
    downsample,
    saturate,
    coordinate_mask
  };

  /// spec: {"kind": ..., "sigma_y": 0.05, ...kind parameters}. See README for
  /// the per-kind keys. Unknown keys are rejected.
  static MeasurementOperator make(const nlohmann::json& spec, const Shape& input_shape);

  Kind kind() const { return kind_; }
  bool linear() const { return kind_ != Kind::saturate; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  double sigma_y() const { return sigma_y_; }
  const nlohmann::json& spec() const { return spec_; }
  /// {0,1} mask over the input (inpainting kinds only; empty otherwise).
  const std::vector<double>& mask() const { return mask_; }
  const Tensor& kernel() const { return kernel_; }

  /// Differentiable A(x). `x` is one input-shaped item or a batch of them.
  Tensor apply(const Tensor& x) const;
  /// A^T y for linear kinds; throws ConfigError for nonlinear ones.
  Tensor adjoint(const Tensor& y) const;
  /// A^T y with a backward rule (the cotangent maps back through A), so it
  /// can sit inside a differentiated loss.
  Tensor adjoint_differentiable(const Tensor& y) const;
  /// J(x)^T cotangent. For linear kinds this equals adjoint(cotangent).
  Tensor vjp(const Tensor& x, const Tensor& cotangent) const;
  /// Dense matrix of a linear operator (rows = outputs), built column by column.
  Eigen::MatrixXd matrix() const;

 private:
  Kind kind_ = Kind::identity;
  Shape input_shape_, output_shape_;
  double sigma_y_ = 0.05;
  nlohmann::json spec_;
  std::vector<double> mask_;
  std::vector<std::size_t> keep_;
  Tensor kernel_;
  Padding padding_ = Padding::reflect;
  std::size_t factor_ = 1;
  double scale_ = 2.0;
};

const char* operator_kind_name(MeasurementOperator::Kind k);

struct Measurement {
  Tensor y;
  nlohmann::json op_spec;
  double sigma_y = 0.0;
  std::uint64_t seed = 0;
};

/// y = A(x) + sigma_y * N(0, I), drawing the noise from `rng` and recording its seed.
Measurement forward(const MeasurementOperator& op, const Tensor& x, Rng& rng);
Measurement forward(const MeasurementOperator& op, const Tensor& x, std::uint64_t seed);

/// Writes the tensor container to `path` and the sidecar to `path` + ".json".
void save_measurement(const std::filesystem::path& path, const Measurement& m);
Measurement load_measurement(const std::filesystem::path& path);

/// Normalised Gaussian kernel of odd size k; sigma <= 0 gives the delta kernel.
Tensor gaussian_kernel(std::size_t k, double sigma);
/// Line kernel of odd length k at `angle_deg`, spread perpendicular to the line
/// by a Gaussian of width sigma (sigma <= 0 gives a one-pixel line).
Tensor motion_kernel(std::size_t k, double angle_deg, double sigma);

}  // namespace equireg
