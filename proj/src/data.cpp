#include "equireg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equireg/error.hpp"
#include "equireg/rng.hpp"
#include "equireg/serialize.hpp"

namespace equireg {

Shape Dataset::item_shape() const {
  if (items.empty()) {
    return metadata.contains("item_shape") ? metadata.at("item_shape").get<Shape>() : Shape{};
  }
  return items.front().shape();
}

GMMPrior mirror_symmetrize(const GMMPrior& prior, std::size_t axis) {
  prior.validate();
  if (axis >= prior.dim()) throw ConfigError("mirror axis " + std::to_string(axis) + " out of range");
  Eigen::VectorXd flip = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(prior.dim()));
  flip(static_cast<Eigen::Index>(axis)) = -1.0;
  GMMPrior out;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    out.weights.push_back(prior.weights[k] / 2);
    out.means.push_back(prior.means[k]);
    out.covariances.push_back(prior.covariances[k]);
  }
  for (std::size_t k = 0; k < prior.size(); ++k) {
    out.weights.push_back(prior.weights[k] / 2);
    out.means.push_back(flip.cwiseProduct(prior.means[k]));
    out.covariances.push_back(flip.asDiagonal() * prior.covariances[k] * flip.asDiagonal());
  }
  return out;
}

namespace {

nlohmann::json base_metadata(const std::string& kind, std::size_t n, std::uint64_t seed) {
  return {{"kind", kind}, {"n", n}, {"seed", seed}};
}

void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed, const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

GMMPrior gmm_points_prior(const nlohmann::json& spec) {
  check_keys(spec, {"prior", "mirror_axis", "sample_shape"}, "gmm-points spec");
  auto prior = GMMPrior::from_json(spec.at("prior"));
  if (spec.contains("mirror_axis") && !spec.at("mirror_axis").is_null()) {
    prior = mirror_symmetrize(prior, spec.at("mirror_axis").get<std::size_t>());
  }
  return prior;
}

Dataset gen_gmm_points(const nlohmann::json& spec, std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.kind = "gmm-points";
  try {
    auto prior = gmm_points_prior(spec);
    const Shape shape = spec.contains("sample_shape") ? spec.at("sample_shape").get<Shape>() : Shape{prior.dim()};
    Rng rng(seed);
    if (n > 0) ds.items = sample_gmm(prior, n, rng, shape);
    ds.metadata = base_metadata(ds.kind, n, seed);
    ds.metadata["spec"] = spec;
    ds.metadata["item_shape"] = shape;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gmm-points spec: ") + e.what());
  }
  return ds;
}

Dataset gen_ring_manifold(std::size_t d, double radius, double thickness, std::size_t n, std::uint64_t seed) {
  if (d < 2) throw ConfigError("ring manifold needs d >= 2");
  if (radius <= 0.0 || thickness < 0.0) throw ConfigError("ring manifold needs radius > 0 and thickness >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.kind = "ring-manifold";
  for (std::size_t i = 0; i < n; ++i) {
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<double> v(d, 0.0);
    v[0] = radius * std::cos(th);
    v[1] = radius * std::sin(th);
    if (thickness > 0.0) {
      for (double& e : v) e += thickness * rng.normal();
    }
    ds.items.emplace_back(Shape{d}, std::move(v));
  }
  ds.metadata = base_metadata(ds.kind, n, seed);
  ds.metadata["d"] = d;
  ds.metadata["radius"] = radius;
  ds.metadata["thickness"] = thickness;
  ds.metadata["item_shape"] = Shape{d};
  return ds;
}

namespace {

std::vector<double> draw_shape_image(std::size_t size, Rng& rng) {
  const double s = static_cast<double>(size);
  std::vector<double> img(size * size, 0.0);
  const std::size_t count = 1 + rng.index(3);
  for (std::size_t k = 0; k < count; ++k) {
    const bool disk = rng.bernoulli(0.5);
    const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
    const double intensity = rng.uniform(0.3, 1.0);
    const double rad = rng.uniform(0.1, 0.25) * s;
    const double hw = rng.uniform(0.05, 0.4) * s, hh = rng.uniform(0.05, 0.4) * s;
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        // Pixel centres sit at half-integers, which keeps the raster symmetric under flips.
        const double px = static_cast<double>(j) + 0.5, py = static_cast<double>(i) + 0.5;
        const bool inside = disk ? (px - cx) * (px - cx) + (py - cy) * (py - cy) <= rad * rad
                                 : std::abs(px - cx) <= hw && std::abs(py - cy) <= hh;
        if (inside) img[i * size + j] = std::max(img[i * size + j], intensity);
      }
    }
  }
  return img;
}

}  // namespace

Dataset gen_sym_shapes_grid(std::size_t size, std::size_t n, std::uint64_t seed) {
  if (size < 2) throw ConfigError("sym-shapes grid needs size >= 2");
  Rng rng(seed);
  Dataset ds;
  ds.kind = "sym-shapes-grid";
  for (std::size_t i = 0; i < n; ++i) ds.items.emplace_back(Shape{size, size}, draw_shape_image(size, rng));
  ds.metadata = base_metadata(ds.kind, n, seed);
  ds.metadata["size"] = size;
  ds.metadata["item_shape"] = Shape{size, size};
  return ds;
}

GMMPrior template_prior(std::size_t size, std::size_t components, double noise, double brightness,
                        std::uint64_t seed) {
  if (components < 2 || components % 2 != 0) throw ConfigError("template prior needs an even component count >= 2");
  if (noise <= 0.0 || brightness < 0.0) throw ConfigError("template prior needs noise > 0 and brightness >= 0");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(size * size);
  GMMPrior g;
  for (std::size_t k = 0; k < components / 2; ++k) {
    std::vector<double> img;
    do {
      img = draw_shape_image(size, rng);
    } while (std::all_of(img.begin(), img.end(), [](double v) { return v == 0.0; }));
    Eigen::VectorXd mu = Eigen::Map<Eigen::VectorXd>(img.data(), d);
    Eigen::VectorXd mirror(d);
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        mirror(static_cast<Eigen::Index>(i * size + j)) = mu(static_cast<Eigen::Index>(i * size + (size - 1 - j)));
      }
    }
    for (const auto& m : {mu, mirror}) {
      Eigen::VectorXd u = m.normalized();
      Eigen::MatrixXd cov = noise * noise * Eigen::MatrixXd::Identity(d, d) + brightness * brightness * u * u.transpose();
      g.weights.push_back(1.0 / static_cast<double>(components));
      g.means.push_back(m);
      g.covariances.push_back(std::move(cov));
    }
  }
  g.validate();
  return g;
}

Dataset gen_template_gmm(const nlohmann::json& params, std::size_t n, std::uint64_t seed) {
  check_keys(params, {"size", "components", "noise", "brightness", "prior_seed"}, "template-gmm params");
  const auto size = params.value("size", std::size_t{16});
  const auto comps = params.value("components", std::size_t{8});
  const double noise = params.value("noise", 0.05), bright = params.value("brightness", 0.2);
  const auto prior_seed = params.value("prior_seed", std::uint64_t{0});
  auto prior = template_prior(size, comps, noise, bright, prior_seed);
  Rng rng(seed);
  Dataset ds;
  ds.kind = "template-gmm";
  if (n > 0) ds.items = sample_gmm(prior, n, rng, {size, size});
  ds.metadata = base_metadata(ds.kind, n, seed);
  ds.metadata["params"] = {{"size", size}, {"components", comps}, {"noise", noise}, {"brightness", bright},
                           {"prior_seed", prior_seed}};
  ds.metadata["item_shape"] = Shape{size, size};
  return ds;
}

Dataset generate_dataset(const nlohmann::json& spec) {
  try {
    const auto kind = spec.at("kind").get<std::string>();
    const auto n = spec.at("n").get<std::size_t>();
    const auto seed = spec.value("seed", std::uint64_t{0});
    if (kind == "gmm-points") {
      check_keys(spec, {"kind", "n", "seed", "spec"}, "dataset spec");
      return gen_gmm_points(spec.at("spec"), n, seed);
    }
    if (kind == "ring-manifold") {
      check_keys(spec, {"kind", "n", "seed", "d", "radius", "thickness"}, "dataset spec");
      return gen_ring_manifold(spec.value("d", std::size_t{2}), spec.value("radius", 1.0),
                               spec.value("thickness", 0.05), n, seed);
    }
    if (kind == "sym-shapes-grid") {
      check_keys(spec, {"kind", "n", "seed", "size"}, "dataset spec");
      return gen_sym_shapes_grid(spec.value("size", std::size_t{16}), n, seed);
    }
    if (kind == "template-gmm") {
      check_keys(spec, {"kind", "n", "seed", "params"}, "dataset spec");
      return gen_template_gmm(spec.value("params", nlohmann::json::object()), n, seed);
    }
    throw ConfigError("unknown dataset kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

std::optional<GMMPrior> dataset_prior(const nlohmann::json& spec) {
  try {
    const auto kind = spec.at("kind").get<std::string>();
    if (kind == "gmm-points") return gmm_points_prior(spec.at("spec"));
    if (kind == "template-gmm") {
      const auto params = spec.value("params", nlohmann::json::object());
      return template_prior(params.value("size", std::size_t{16}), params.value("components", std::size_t{8}),
                            params.value("noise", 0.05), params.value("brightness", 0.2),
                            params.value("prior_seed", std::uint64_t{0}));
    }
    return std::nullopt;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

Shape dataset_item_shape(const nlohmann::json& spec) {
  auto probe = spec;
  probe["n"] = 0;
  return generate_dataset(probe).item_shape();
}

Dataset regenerate_dataset(const nlohmann::json& md) {
  nlohmann::json spec = {{"kind", md.at("kind")}, {"n", md.at("n")}, {"seed", md.at("seed")}};
  for (const char* key : {"spec", "d", "radius", "thickness", "size", "params"}) {
    if (md.contains(key)) spec[key] = md.at(key);
  }
  return generate_dataset(spec);
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  Bundle b;
  b.manifest = {{"format", "equireg-dataset"}, {"metadata", ds.metadata}, {"count", ds.items.size()}};
  b.tensors = ds.items;
  save_bundle(path, b);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto b = load_bundle(path);
  try {
    if (b.manifest.at("format").get<std::string>() != "equireg-dataset") {
      throw IoError(path.string() + ": not a dataset file");
    }
    Dataset ds;
    ds.metadata = b.manifest.at("metadata");
    ds.kind = ds.metadata.at("kind").get<std::string>();
    ds.items = std::move(b.tensors);
    if (ds.items.size() != b.manifest.at("count").get<std::size_t>()) throw IoError(path.string() + ": item count");
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": dataset manifest: " + e.what());
  }
}

Dataset load_dataset_regenerated(const std::filesystem::path& path) {
  auto m = load_bundle_manifest(path);
  try {
    return regenerate_dataset(m.at("metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": dataset manifest: " + e.what());
  }
}

}  // namespace equireg
