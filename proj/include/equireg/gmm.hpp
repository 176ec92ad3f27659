#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "equireg/rng.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

/// Gaussian mixture over R^d.
struct GMMPrior {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }
  std::size_t size() const { return weights.size(); }

  /// Throws ConfigError unless weights form a simplex (1e-12) and every
  /// covariance is symmetric positive definite.
  void validate() const;

  nlohmann::json to_json() const;
  static GMMPrior from_json(const nlohmann::json& j);
};

/// Precomputed spectral form of a mixture, evaluating the exact marginal of
/// the VP forward process: p_t = sum_k w_k N(sqrt(ab) mu_k, ab Sigma_k + (1-ab) I).
///
/// Each covariance is stored as an isotropic floor plus the eigen-directions
/// that rise above it, so applying a marginal precision costs O(d r) where r
/// is the number of non-floor eigenvalues.
class GMMDensity {
 public:
  explicit GMMDensity(GMMPrior prior);

  const GMMPrior& prior() const { return prior_; }
  std::size_t dim() const { return prior_.dim(); }

  double log_density(std::span<const double> x, double alpha_bar) const;
  /// Responsibilities r_k(x) under the noised mixture.
  std::vector<double> responsibilities(std::span<const double> x, double alpha_bar) const;
  /// Exact grad_x log p_t(x).
  void score(std::span<const double> x, double alpha_bar, std::span<double> out) const;
  /// Hessian of log p_t at x applied to v (the Hessian is symmetric, so this
  /// is also the vector-Jacobian product of the score map).
  void hessian_vector(std::span<const double> x, double alpha_bar, std::span<const double> v,
                      std::span<double> out) const;

 private:
  struct Component {
    double log_weight;
    Eigen::VectorXd mean;
    Eigen::MatrixXd directions;  // d x r
    Eigen::VectorXd eigenvalues;  // r, all above the floor
    double floor;
  };
  struct Workspace;
  // Fills per-component log-likelihood terms and precision-applied residuals.
  void evaluate(std::span<const double> x, double alpha_bar, Workspace& ws) const;
  void apply_precision(const Component& c, double alpha_bar, const Eigen::VectorXd& v,
                       Eigen::VectorXd& out) const;

  GMMPrior prior_;
  std::vector<Component> components_;
};

/// Differentiable exact score of the mixture. `x` holds one sample or a batch
/// of samples laid out contiguously (numel must be a multiple of d); the
/// backward rule is the exact Hessian-vector product.
Tensor gmm_score(const std::shared_ptr<const GMMDensity>& density, const Tensor& x, double alpha_bar);

/// n independent draws: categorical component, then Cholesky-transformed normal.
std::vector<Tensor> sample_gmm(const GMMPrior& prior, std::size_t n, Rng& rng, const Shape& sample_shape = {});

/// Row-major n x d matrix of draws (fast path for large sample sets).
Eigen::MatrixXd sample_gmm_matrix(const GMMPrior& prior, std::size_t n, Rng& rng);

}  // namespace equireg
