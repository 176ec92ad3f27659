#include "equireg/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "equireg/error.hpp"

namespace equireg {

void GMMPrior::validate() const {
  if (weights.empty()) throw ConfigError("GMM: no components");
  if (means.size() != weights.size() || covariances.size() != weights.size()) {
    throw ConfigError("GMM: weights, means and covariances differ in count");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("GMM: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GMM: weights must sum to 1");
  const auto d = means.front().size();
  for (std::size_t k = 0; k < size(); ++k) {
    if (means[k].size() != d || covariances[k].rows() != d || covariances[k].cols() != d) {
      throw ConfigError("GMM: inconsistent component dimensions");
    }
    const auto& c = covariances[k];
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff())) {
      throw ConfigError("GMM: covariance " + std::to_string(k) + " is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) {
      throw ConfigError("GMM: covariance " + std::to_string(k) + " is not positive definite");
    }
  }
}

nlohmann::json GMMPrior::to_json() const {
  nlohmann::json j;
  j["weights"] = weights;
  j["means"] = nlohmann::json::array();
  j["covariances"] = nlohmann::json::array();
  for (std::size_t k = 0; k < size(); ++k) {
    j["means"].push_back(std::vector<double>(means[k].data(), means[k].data() + means[k].size()));
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < covariances[k].rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(covariances[k].cols()));
      for (Eigen::Index c = 0; c < covariances[k].cols(); ++c) row[c] = covariances[k](r, c);
      rows.push_back(row);
    }
    j["covariances"].push_back(rows);
  }
  return j;
}

GMMPrior GMMPrior::from_json(const nlohmann::json& j) {
  GMMPrior g;
  try {
    g.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& m : j.at("means")) {
      auto v = m.get<std::vector<double>>();
      g.means.emplace_back(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    for (const auto& c : j.at("covariances")) {
      auto rows = c.get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd m(rows.size(), rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw ConfigError("GMM json: covariance must be square");
        for (std::size_t col = 0; col < rows.size(); ++col) m(r, col) = rows[r][col];
      }
      g.covariances.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("GMM json: ") + e.what());
  }
  g.validate();
  return g;
}

struct GMMDensity::Workspace {
  std::vector<Eigen::VectorXd> residual;   // x - sqrt(ab) mu_k
  std::vector<Eigen::VectorXd> precision;  // C_k^{-1} residual
  std::vector<double> log_terms;           // log w_k + log N_k
  std::vector<double> resp;
  double log_norm = 0.0;
};

GMMDensity::GMMDensity(GMMPrior prior) : prior_(std::move(prior)) {
  prior_.validate();
  for (std::size_t k = 0; k < prior_.size(); ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(prior_.covariances[k]);
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const double floor = std::max(0.0, lam(0));
    const double tol = 1e-9 * std::max(1.0, lam(lam.size() - 1));
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      if (lam(i) > floor + tol) keep.push_back(i);
    }
    Component c;
    c.log_weight = prior_.weights[k] > 0.0 ? std::log(prior_.weights[k]) : -INFINITY;
    c.mean = prior_.means[k];
    c.floor = floor;
    c.directions.resize(lam.size(), static_cast<Eigen::Index>(keep.size()));
    c.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      c.directions.col(static_cast<Eigen::Index>(i)) = eig.eigenvectors().col(keep[i]);
      c.eigenvalues(static_cast<Eigen::Index>(i)) = lam(keep[i]);
    }
    components_.push_back(std::move(c));
  }
}

void GMMDensity::apply_precision(const Component& c, double ab, const Eigen::VectorXd& v,
                                 Eigen::VectorXd& out) const {
  const double c0 = ab * c.floor + 1.0 - ab;
  if (!(c0 > 0.0)) throw NumericError("GMM: singular marginal covariance (alpha_bar = 1 with singular Sigma)");
  out = v / c0;
  if (c.eigenvalues.size() > 0) {
    Eigen::VectorXd proj = c.directions.transpose() * v;
    for (Eigen::Index i = 0; i < proj.size(); ++i) proj(i) *= 1.0 / (ab * c.eigenvalues(i) + 1.0 - ab) - 1.0 / c0;
    out.noalias() += c.directions * proj;
  }
}

void GMMDensity::evaluate(std::span<const double> x, double ab, Workspace& ws) const {
  const auto d = static_cast<Eigen::Index>(dim());
  if (static_cast<Eigen::Index>(x.size()) != d) {
    throw ShapeError("GMM: expected dimension " + std::to_string(d) + ", got " + std::to_string(x.size()));
  }
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), d);
  const std::size_t K = components_.size();
  ws.residual.resize(K);
  ws.precision.resize(K);
  ws.log_terms.resize(K);
  ws.resp.resize(K);
  const double sab = std::sqrt(ab);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double best = -INFINITY;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = components_[k];
    ws.residual[k] = xv - sab * c.mean;
    apply_precision(c, ab, ws.residual[k], ws.precision[k]);
    const double c0 = ab * c.floor + 1.0 - ab;
    double logdet = static_cast<double>(d - c.eigenvalues.size()) * std::log(c0);
    for (Eigen::Index i = 0; i < c.eigenvalues.size(); ++i) logdet += std::log(ab * c.eigenvalues(i) + 1.0 - ab);
    const double quad = ws.residual[k].dot(ws.precision[k]);
    ws.log_terms[k] = c.log_weight - 0.5 * (quad + logdet + static_cast<double>(d) * log2pi);
    best = std::max(best, ws.log_terms[k]);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    ws.resp[k] = std::exp(ws.log_terms[k] - best);
    total += ws.resp[k];
  }
  for (auto& r : ws.resp) r /= total;
  ws.log_norm = best + std::log(total);
}

double GMMDensity::log_density(std::span<const double> x, double ab) const {
  Workspace ws;
  evaluate(x, ab, ws);
  return ws.log_norm;
}

std::vector<double> GMMDensity::responsibilities(std::span<const double> x, double ab) const {
  Workspace ws;
  evaluate(x, ab, ws);
  return ws.resp;
}

void GMMDensity::score(std::span<const double> x, double ab, std::span<double> out) const {
  Workspace ws;
  evaluate(x, ab, ws);
  Eigen::Map<Eigen::VectorXd> o(out.data(), static_cast<Eigen::Index>(dim()));
  o.setZero();
  for (std::size_t k = 0; k < components_.size(); ++k) o.noalias() -= ws.resp[k] * ws.precision[k];
}

void GMMDensity::hessian_vector(std::span<const double> x, double ab, std::span<const double> v,
                                std::span<double> out) const {
  Workspace ws;
  evaluate(x, ab, ws);
  const auto d = static_cast<Eigen::Index>(dim());
  Eigen::Map<const Eigen::VectorXd> vv(v.data(), d);
  Eigen::Map<Eigen::VectorXd> o(out.data(), d);
  // H = sum_k r_k (-C_k^{-1} + s_k s_k^T) - s s^T, with s_k = -C_k^{-1}(x - sqrt(ab) mu_k).
  Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd pv;
  o.setZero();
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const double r = ws.resp[k];
    if (r == 0.0) continue;
    apply_precision(components_[k], ab, vv, pv);
    const double sk_v = -ws.precision[k].dot(vv);
    o.noalias() += r * (-pv - sk_v * ws.precision[k]);
    s.noalias() -= r * ws.precision[k];
  }
  o.noalias() -= s * s.dot(vv);
}

Tensor gmm_score(const std::shared_ptr<const GMMDensity>& density, const Tensor& x, double alpha_bar) {
  const std::size_t d = density->dim();
  if (x.numel() % d != 0) {
    throw ShapeError("gmm_score: input " + shape_str(x.shape()) + " is not a batch of dimension " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    density->score(xv.subspan(r * d, d), alpha_bar, std::span<double>(out.data() + r * d, d));
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [density, x, alpha_bar, d, rows](std::span<const double> g, detail::GradSlots& slots) {
        auto xv = x.data();
        std::vector<double> hv(d);
        auto& gx = *slots[0];
        for (std::size_t r = 0; r < rows; ++r) {
          density->hessian_vector(xv.subspan(r * d, d), alpha_bar, g.subspan(r * d, d), hv);
          for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += hv[i];
        }
      },
      "gmm_score");
}

Eigen::MatrixXd sample_gmm_matrix(const GMMPrior& prior, std::size_t n, Rng& rng) {
  prior.validate();
  const auto d = static_cast<Eigen::Index>(prior.dim());
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& c : prior.covariances) chol.push_back(Eigen::LLT<Eigen::MatrixXd>(c).matrixL());
  std::discrete_distribution<std::size_t> pick(prior.weights.begin(), prior.weights.end());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), d);
  Eigen::VectorXd z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng.engine());
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    out.row(static_cast<Eigen::Index>(i)) = (prior.means[k] + chol[k] * z).transpose();
  }
  return out;
}

std::vector<Tensor> sample_gmm(const GMMPrior& prior, std::size_t n, Rng& rng, const Shape& sample_shape) {
  Shape shape = sample_shape.empty() ? Shape{prior.dim()} : sample_shape;
  if (numel_of(shape) != prior.dim()) throw ShapeError("sample_gmm: sample shape does not match dimension");
  auto m = sample_gmm_matrix(prior, n, rng);
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(prior.dim());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out.emplace_back(shape, std::move(v));
  }
  return out;
}

}  // namespace equireg
