#include "equireg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equireg/error.hpp"

namespace equireg {

PosteriorOracle gmm_posterior_exact(const GMMPrior& prior, const Eigen::MatrixXd& a, double sigma_y,
                                    const Eigen::VectorXd& y) {
  prior.validate();
  const auto d = static_cast<Eigen::Index>(prior.dim());
  if (a.cols() != d) throw ShapeError("posterior oracle: A has " + std::to_string(a.cols()) + " columns, prior dim " +
                                      std::to_string(d));
  if (a.rows() != y.size()) throw ShapeError("posterior oracle: y length does not match A");
  if (!(sigma_y > 0.0)) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    throw ConfigError(lu.rank() < d ? "posterior oracle: sigma_y = 0 with rank-deficient A is ill-posed"
                                    : "posterior oracle: sigma_y = 0 gives a point-mass posterior; use sigma_y > 0");
  }
  const auto m = a.rows();
  const double s2 = sigma_y * sigma_y;
  PosteriorOracle out;
  std::vector<double> logw;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto& mu = prior.means[k];
    const auto& cov = prior.covariances[k];
    Eigen::MatrixXd ac = a * cov;  // m x d
    Eigen::MatrixXd s = ac * a.transpose() + s2 * Eigen::MatrixXd::Identity(m, m);
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw NumericError("posterior oracle: innovation covariance not SPD");
    Eigen::VectorXd r = y - a * mu;
    Eigen::MatrixXd gain = llt.solve(ac).transpose();  // d x m, Sigma A^T S^-1
    Eigen::VectorXd mu_post = mu + gain * r;
    Eigen::MatrixXd cov_post = cov - gain * ac;
    cov_post = 0.5 * (cov_post + cov_post.transpose()).eval();
    const Eigen::MatrixXd lmat = llt.matrixL();
    const double logdet = 2.0 * lmat.diagonal().array().log().sum();
    const Eigen::VectorXd white = llt.matrixL().solve(r);
    logw.push_back(std::log(prior.weights[k]) - 0.5 * (white.squaredNorm() + logdet +
                                                       static_cast<double>(m) * std::log(2.0 * std::numbers::pi)));
    out.posterior.means.push_back(std::move(mu_post));
    out.posterior.covariances.push_back(std::move(cov_post));
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  for (double lw : logw) z += std::exp(lw - mx);
  for (double lw : logw) out.posterior.weights.push_back(std::exp(lw - mx) / z);
  out.posterior.validate();
  out.source = {{"sigma_y", sigma_y}, {"y", std::vector<double>(y.data(), y.data() + y.size())},
                {"rows", a.rows()}, {"cols", a.cols()}};
  return out;
}

PosteriorOracle gmm_posterior_exact(const GMMPrior& prior, const MeasurementOperator& op, const Tensor& y) {
  if (!op.linear()) throw ConfigError("posterior oracle needs a linear operator");
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data().data(), static_cast<Eigen::Index>(y.numel()));
  auto out = gmm_posterior_exact(prior, op.matrix(), op.sigma_y(), yv);
  out.source["operator"] = op.spec();
  return out;
}

Eigen::MatrixXd stack_samples(const std::vector<Tensor>& samples) {
  if (samples.empty()) return Eigen::MatrixXd(0, 0);
  const std::size_t d = samples.front().numel();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].numel() != d) throw ShapeError("stack_samples: sample sizes differ");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].data()[j];
  }
  return m;
}

namespace {

// Quantile of sorted data at level u in [0,1], linear between order statistics
// placed at (i + 0.5) / n.
double quantile(const std::vector<double>& sorted, double u) {
  const double n = static_cast<double>(sorted.size());
  const double pos = u * n - 0.5;
  if (pos <= 0.0) return sorted.front();
  if (pos >= n - 1.0) return sorted.back();
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  return sorted[i] + f * (sorted[i + 1] - sorted[i]);
}

}  // namespace

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("wasserstein_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
  }
  const std::size_t levels = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < levels; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(levels);
    const double diff = quantile(a, u) - quantile(b, u);
    acc += diff * diff;
  }
  return std::sqrt(acc / static_cast<double>(levels));
}

double sliced_wasserstein(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::size_t n_proj, Rng& rng) {
  if (n_proj < 1) throw ConfigError("sliced_wasserstein: n_proj must be >= 1");
  if (a.cols() != b.cols()) throw ShapeError("sliced_wasserstein: dimensions differ");
  if (a.rows() == 0 || b.rows() == 0) throw ConfigError("sliced_wasserstein: empty sample set");
  const auto d = a.cols();
  double total = 0.0;
  for (std::size_t p = 0; p < n_proj; ++p) {
    Eigen::VectorXd dir(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) dir(j) = rng.normal();
    } while (dir.norm() == 0.0);
    dir.normalize();
    Eigen::VectorXd pa = a * dir, pb = b * dir;
    total += wasserstein_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                            std::vector<double>(pb.data(), pb.data() + pb.size()));
  }
  return total / static_cast<double>(n_proj);
}

double sliced_wasserstein(const std::vector<Tensor>& a, const std::vector<Tensor>& b, std::size_t n_proj, Rng& rng) {
  return sliced_wasserstein(stack_samples(a), stack_samples(b), n_proj, rng);
}

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  if (x.shape() != ref.shape()) throw ShapeError("psnr: shapes differ");
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) mse += (x.data()[i] - ref.data()[i]) * (x.data()[i] - ref.data()[i]);
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return kPsnrSentinel;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& x, const Tensor& ref, double peak) {
  if (x.shape() != ref.shape()) throw ShapeError("ssim: shapes differ");
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  auto window_ssim = [&](const std::vector<double>& w, auto index) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      mx += w[i] * x.data()[index(i)];
      my += w[i] * ref.data()[index(i)];
    }
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double dx = x.data()[index(i)] - mx, dy = ref.data()[index(i)] - my;
      vx += w[i] * dx * dx;
      vy += w[i] * dy * dy;
      cxy += w[i] * dx * dy;
    }
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  };
  if (x.dim() < 2) {
    std::vector<double> w(x.numel(), 1.0 / static_cast<double>(x.numel()));
    return window_ssim(w, [](std::size_t i) { return i; });
  }
  const std::size_t h = x.shape()[x.dim() - 2], wd = x.shape()[x.dim() - 1];
  const std::size_t planes = x.numel() / (h * wd);
  std::size_t k = std::min<std::size_t>({7, h, wd});
  if (k % 2 == 0) --k;
  std::vector<double> w(k * k);
  double wsum = 0.0;
  const double c = static_cast<double>(k / 2);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      w[i * k + j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
      wsum += w[i * k + j];
    }
  }
  for (double& v : w) v /= wsum;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i0 = 0; i0 + k <= h; ++i0) {
      for (std::size_t j0 = 0; j0 + k <= wd; ++j0) {
        total += window_ssim(w, [&](std::size_t q) { return (p * h + i0 + q / k) * wd + j0 + q % k; });
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

Diversity diversity(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ConfigError("diversity: need at least one sample");
  const auto shape = samples.front().shape();
  for (const auto& s : samples) {
    if (s.shape() != shape) throw ShapeError("diversity: sample shapes differ");
  }
  Diversity out;
  const std::size_t k = samples.size(), d = samples.front().numel();
  if (k == 1) return out;
  double pairs = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double diff = samples[i].data()[q] - samples[j].data()[q];
        acc += diff * diff;
      }
      out.intra_dist += std::sqrt(acc);
      pairs += 1.0;
    }
  }
  out.intra_dist /= pairs;
  for (std::size_t q = 0; q < d; ++q) {
    double mu = 0.0, var = 0.0;
    for (const auto& s : samples) mu += s.data()[q];
    mu /= static_cast<double>(k);
    for (const auto& s : samples) var += (s.data()[q] - mu) * (s.data()[q] - mu);
    out.pixel_std += std::sqrt(var / static_cast<double>(k));
  }
  out.pixel_std /= static_cast<double>(d);
  return out;
}

FreeEnergy free_energy_estimate(const Eigen::MatrixXd& particles,
                                const std::function<double(const Eigen::VectorXd&)>& potential, double bandwidth) {
  const auto n = particles.rows(), d = particles.cols();
  if (d < 1 || d > 2) throw ConfigError("free_energy_estimate supports 1-D or 2-D particles only");
  if (n < 2) throw ConfigError("free_energy_estimate needs at least two particles");
  Eigen::VectorXd h(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (bandwidth > 0.0) {
      h(j) = bandwidth;
      continue;
    }
    const double mu = particles.col(j).mean();
    const double sd = std::sqrt((particles.col(j).array() - mu).square().sum() / static_cast<double>(n - 1));
    // Silverman's rule: 1.06 sd n^(-1/5) in 1-D, sd n^(-1/6) per axis in 2-D.
    h(j) = d == 1 ? 1.06 * sd * std::pow(static_cast<double>(n), -0.2) : sd * std::pow(static_cast<double>(n), -1.0 / 6.0);
    if (!(h(j) > 0.0)) throw NumericError("free_energy_estimate: degenerate particle spread");
  }
  const double norm = std::pow(2.0 * std::numbers::pi, -0.5 * static_cast<double>(d)) / h.prod();
  FreeEnergy fe;
  fe.bandwidth = h(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double dens = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      double q = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double u = (particles(i, c) - particles(j, c)) / h(c);
        q += u * u;
      }
      dens += std::exp(-0.5 * q);
    }
    dens *= norm / static_cast<double>(n - 1);
    fe.log_density += std::log(std::max(dens, 1e-300));
    fe.potential += potential(particles.row(i).transpose());
  }
  fe.log_density /= static_cast<double>(n);
  fe.potential /= static_cast<double>(n);
  fe.value = fe.potential + 0.5 * fe.log_density;
  return fe;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"psnr", psnr}, {"ssim", ssim}, {"sw2", sw2}, {"intra_dist", intra_dist}, {"pixel_std", pixel_std}};
  for (const auto& [k, v] : extra) j["extra"][k] = v;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.psnr = j.at("psnr").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.sw2 = j.at("sw2").get<double>();
  r.intra_dist = j.at("intra_dist").get<double>();
  r.pixel_std = j.at("pixel_std").get<double>();
  if (j.contains("extra")) r.extra = j.at("extra").get<std::map<std::string, double>>();
  return r;
}

}  // namespace equireg
