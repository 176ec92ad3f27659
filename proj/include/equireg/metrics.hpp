#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "equireg/gmm.hpp"
#include "equireg/measure.hpp"
#include "equireg/rng.hpp"
#include "equireg/tensor.hpp"

namespace equireg {

/// Exact posterior of a GMM prior under y = A x + sigma_y * N(0, I).
struct PosteriorOracle {
  GMMPrior posterior;
  nlohmann::json source;
};

/// Per component: S = A Sigma A^T + s^2 I, K = Sigma A^T S^-1,
/// mu' = mu + K (y - A mu), Sigma' = Sigma - K A Sigma, and
/// w' proportional to w N(y; A mu, S), normalised in the log domain.
/// sigma_y must be positive.
PosteriorOracle gmm_posterior_exact(const GMMPrior& prior, const Eigen::MatrixXd& a, double sigma_y,
                                    const Eigen::VectorXd& y);
/// Uses the dense matrix of a linear operator.
PosteriorOracle gmm_posterior_exact(const GMMPrior& prior, const MeasurementOperator& op, const Tensor& y);

/// Rows of the result are the flattened samples.
Eigen::MatrixXd stack_samples(const std::vector<Tensor>& samples);

/// Mean over n_proj random unit directions of the 1-D Wasserstein-2 distance
/// between the projected empirical distributions (linear quantile interpolation).
double sliced_wasserstein(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::size_t n_proj, Rng& rng);
double sliced_wasserstein(const std::vector<Tensor>& a, const std::vector<Tensor>& b, std::size_t n_proj, Rng& rng);
/// Exact 1-D W2 between two empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

inline constexpr double kPsnrSentinel = 99.0;

/// 10 log10(peak^2 / MSE); identical inputs give kPsnrSentinel.
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);
/// Mean SSIM over valid Gaussian windows (sigma 1.5, side min(7, H, W) made
/// odd) with K1 = 0.01, K2 = 0.03 and dynamic range `peak`. Vectors are
/// treated as a single window.
double ssim(const Tensor& x, const Tensor& ref, double peak = 1.0);

struct Diversity {
  double intra_dist = 0.0;
  double pixel_std = 0.0;
};
/// Mean pairwise L2 over the K(K-1)/2 pairs and the mean of the per-pixel
/// population standard deviation.
Diversity diversity(const std::vector<Tensor>& samples);

struct FreeEnergy {
  double potential = 0.0;    // mean V(x_i)
  double log_density = 0.0;  // mean log rho_hat(x_i), an estimate of minus the differential entropy
  double value = 0.0;        // potential + 0.5 * log_density
  double bandwidth = 0.0;
};
/// Leave-one-out Gaussian KDE plug-in estimate for 1-D or 2-D particles
/// (rows). bandwidth <= 0 selects Silverman's rule per dimension.
FreeEnergy free_energy_estimate(const Eigen::MatrixXd& particles,
                                const std::function<double(const Eigen::VectorXd&)>& potential,
                                double bandwidth = 0.0);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double sw2 = 0.0;
  double intra_dist = 0.0;
  double pixel_std = 0.0;
  std::map<std::string, double> extra;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace equireg
