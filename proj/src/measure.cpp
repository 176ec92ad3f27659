#include "equireg/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equireg/autodiff.hpp"
#include "equireg/error.hpp"
#include "equireg/serialize.hpp"

namespace equireg {

namespace {

void check_keys(const nlohmann::json& spec, std::initializer_list<const char*> allowed) {
  for (auto it = spec.begin(); it != spec.end(); ++it) {
    const auto& k = it.key();
    if (k == "kind" || k == "sigma_y") continue;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError("operator '" + spec.at("kind").get<std::string>() + "': unknown key '" + k + "'");
    }
  }
}

void require_grid(const Shape& s, const std::string& kind) {
  if (s.size() < 2) throw ShapeError(kind + " needs a 2-D grid input, got " + shape_str(s));
}

// Elementwise product with a fixed mask repeated over batch blocks.
Tensor apply_mask(const Tensor& x, const std::vector<double>& mask) {
  const std::size_t n = mask.size();
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i % n];
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [mask](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        const std::size_t n = mask.size();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i % n];
      },
      "mask");
}

std::size_t batch_of(const Tensor& x, const Shape& item, const char* what) {
  const std::size_t n = numel_of(item);
  if (x.numel() % n != 0 || x.numel() == 0) {
    throw ShapeError(std::string(what) + ": input " + shape_str(x.shape()) + " does not match " + shape_str(item));
  }
  return x.numel() / n;
}

Shape batched(const Shape& item, std::size_t batch, const Tensor& like) {
  if (batch == 1 && like.shape() == item) return item;
  Shape s{batch};
  s.insert(s.end(), item.begin(), item.end());
  return s;
}

}  // namespace

const char* operator_kind_name(MeasurementOperator::Kind k) {
  using K = MeasurementOperator::Kind;
  switch (k) {
    case K::identity: return "identity";
    case K::box_inpaint: return "box-inpaint";
    case K::random_inpaint: return "random-inpaint";
    case K::gaussian_blur: return "gaussian-blur";
    case K::motion_blur: return "motion-blur";
    case K::downsample: return "downsample";
    case K::saturate: return "saturate";
    case K::coordinate_mask: return "coordinate-mask";
  }
  return "?";
}

Tensor gaussian_kernel(std::size_t k, double sigma) {
  if (k % 2 == 0) throw ConfigError("blur kernel size must be odd");
  std::vector<double> w(k * k, 0.0);
  const long r = static_cast<long>(k / 2);
  if (sigma <= 0.0) {
    w[static_cast<std::size_t>(r) * k + static_cast<std::size_t>(r)] = 1.0;
    return Tensor({k, k}, w);
  }
  double total = 0.0;
  for (long i = -r; i <= r; ++i)
    for (long j = -r; j <= r; ++j) {
      const double v = std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>((i + r) * static_cast<long>(k) + (j + r))] = v;
      total += v;
    }
  for (auto& v : w) v /= total;
  return Tensor({k, k}, w);
}

Tensor motion_kernel(std::size_t k, double angle_deg, double sigma) {
  if (k % 2 == 0) throw ConfigError("blur kernel size must be odd");
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double ux = std::cos(th), uy = -std::sin(th);  // direction in (col, row) with rows pointing down
  const double r = static_cast<double>(k / 2);
  std::vector<double> w(k * k, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double dx = static_cast<double>(j) - r, dy = static_cast<double>(i) - r;
      const double along = dx * ux + dy * uy;
      const double perp = -dx * uy + dy * ux;
      if (std::abs(along) > r + 1e-9) continue;
      double v;
      if (sigma > 0.0) {
        v = std::exp(-perp * perp / (2.0 * sigma * sigma));
      } else {
        v = std::abs(perp) <= 0.5 ? 1.0 : 0.0;
      }
      w[i * k + j] = v;
      total += v;
    }
  for (auto& v : w) v /= total;
  return Tensor({k, k}, w);
}

MeasurementOperator MeasurementOperator::make(const nlohmann::json& spec, const Shape& input_shape) {
  MeasurementOperator op;
  try {
    const auto kind = spec.at("kind").get<std::string>();
    op.spec_ = spec;
    op.input_shape_ = input_shape;
    op.output_shape_ = input_shape;
    op.sigma_y_ = spec.value("sigma_y", 0.05);
    if (!(op.sigma_y_ >= 0.0)) throw ConfigError("sigma_y must be non-negative");
    const std::size_t n = numel_of(input_shape);
    if (kind == "identity") {
      check_keys(spec, {});
      op.kind_ = Kind::identity;
    } else if (kind == "box-inpaint") {
      check_keys(spec, {"size", "top", "left", "position", "mask_seed"});
      require_grid(input_shape, kind);
      op.kind_ = Kind::box_inpaint;
      const std::size_t h = input_shape[input_shape.size() - 2], w = input_shape.back();
      const auto size = spec.at("size").get<std::size_t>();
      if (size == 0 || size > h || size > w) throw ConfigError("box mask larger than the grid");
      std::size_t top, left;
      const auto position = spec.value("position", std::string("center"));
      if (spec.contains("top") || spec.contains("left")) {
        top = spec.value("top", std::size_t{0});
        left = spec.value("left", std::size_t{0});
      } else if (position == "center") {
        top = (h - size) / 2;
        left = (w - size) / 2;
      } else if (position == "random") {
        Rng rng(spec.value("mask_seed", std::uint64_t{0}));
        top = rng.index(h - size + 1);
        left = rng.index(w - size + 1);
      } else {
        throw ConfigError("box position must be 'center' or 'random'");
      }
      if (top + size > h || left + size > w) throw ConfigError("box mask extends past the grid");
      op.mask_.assign(n, 1.0);
      const std::size_t planes = n / (h * w);
      for (std::size_t c = 0; c < planes; ++c)
        for (std::size_t i = top; i < top + size; ++i)
          for (std::size_t j = left; j < left + size; ++j) op.mask_[(c * h + i) * w + j] = 0.0;
    } else if (kind == "random-inpaint") {
      check_keys(spec, {"keep_prob", "mask_seed"});
      op.kind_ = Kind::random_inpaint;
      const double keep = spec.value("keep_prob", 0.3);
      if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("keep_prob must lie in (0,1]");
      Rng rng(spec.value("mask_seed", std::uint64_t{0}));
      op.mask_.resize(n);
      for (auto& m : op.mask_) m = rng.bernoulli(keep) ? 1.0 : 0.0;
    } else if (kind == "gaussian-blur" || kind == "motion-blur") {
      require_grid(input_shape, kind);
      const auto k = spec.value("kernel", std::size_t{5});
      op.padding_ = parse_padding(spec.value("padding", std::string("reflect")));
      if (kind == "gaussian-blur") {
        check_keys(spec, {"kernel", "sigma", "padding"});
        op.kind_ = Kind::gaussian_blur;
        op.kernel_ = gaussian_kernel(k, spec.value("sigma", 1.0));
      } else {
        check_keys(spec, {"kernel", "sigma", "angle", "padding"});
        op.kind_ = Kind::motion_blur;
        op.kernel_ = motion_kernel(k, spec.value("angle", 0.0), spec.value("sigma", 0.0));
      }
      if (k > input_shape.back() || k > input_shape[input_shape.size() - 2]) {
        throw ConfigError("blur kernel larger than the grid");
      }
    } else if (kind == "downsample") {
      check_keys(spec, {"factor"});
      require_grid(input_shape, kind);
      op.kind_ = Kind::downsample;
      op.factor_ = spec.value("factor", std::size_t{4});
      const std::size_t h = input_shape[input_shape.size() - 2], w = input_shape.back();
      if (op.factor_ == 0 || h % op.factor_ != 0 || w % op.factor_ != 0) {
        throw ConfigError("downsample factor must divide the grid size");
      }
      op.output_shape_[op.output_shape_.size() - 2] = h / op.factor_;
      op.output_shape_.back() = w / op.factor_;
    } else if (kind == "saturate") {
      check_keys(spec, {"scale"});
      op.kind_ = Kind::saturate;
      op.scale_ = spec.value("scale", 2.0);
      if (!(op.scale_ > 0.0)) throw ConfigError("saturate scale must be positive");
    } else if (kind == "coordinate-mask") {
      check_keys(spec, {"keep"});
      op.kind_ = Kind::coordinate_mask;
      op.keep_ = spec.at("keep").get<std::vector<std::size_t>>();
      if (op.keep_.empty()) throw ConfigError("coordinate-mask needs at least one coordinate");
      for (auto i : op.keep_) {
        if (i >= n) throw ConfigError("coordinate-mask index out of range");
      }
      op.output_shape_ = {op.keep_.size()};
    } else {
      throw ConfigError("unknown operator kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("operator spec: ") + e.what());
  }
  return op;
}

Tensor MeasurementOperator::apply(const Tensor& x) const {
  const std::size_t batch = batch_of(x, input_shape_, "operator");
  switch (kind_) {
    case Kind::identity: return x;
    case Kind::box_inpaint:
    case Kind::random_inpaint: return apply_mask(x, mask_);
    case Kind::gaussian_blur:
    case Kind::motion_blur: {
      const std::size_t h = input_shape_[input_shape_.size() - 2], w = input_shape_.back();
      const std::size_t planes = x.numel() / (h * w);
      return conv2d(x.reshape({planes, h, w}), kernel_, padding_).reshape(x.shape());
    }
    case Kind::downsample:
      return downsample(x.reshape(batched(input_shape_, batch, x)), factor_)
          .reshape(batched(output_shape_, batch, x));
    case Kind::saturate: return tanh(x * scale_) * (1.0 / scale_);
    case Kind::coordinate_mask: {
      const std::size_t n = numel_of(input_shape_), m = keep_.size();
      std::vector<std::size_t> index(batch * m);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i) index[b * m + i] = b * n + keep_[i];
      return gather(x, index, batch == 1 && x.shape() == input_shape_ ? output_shape_ : Shape{batch, m});
    }
  }
  throw Error("unreachable operator kind");
}

Tensor MeasurementOperator::adjoint(const Tensor& y) const {
  if (!linear()) throw ConfigError(std::string("operator '") + operator_kind_name(kind_) + "' has no adjoint");
  const std::size_t batch = batch_of(y, output_shape_, "adjoint");
  switch (kind_) {
    case Kind::identity: return y;
    case Kind::box_inpaint:
    case Kind::random_inpaint: return apply_mask(y, mask_);
    case Kind::gaussian_blur:
    case Kind::motion_blur: {
      const std::size_t h = input_shape_[input_shape_.size() - 2], w = input_shape_.back();
      const std::size_t planes = y.numel() / (h * w);
      return conv2d_adjoint(y.reshape({planes, h, w}), kernel_, padding_).reshape(y.shape());
    }
    case Kind::downsample: {
      auto up = upsample(y.reshape(batched(output_shape_, batch, y)), factor_);
      return (up * (1.0 / static_cast<double>(factor_ * factor_))).reshape(batched(input_shape_, batch, y));
    }
    case Kind::coordinate_mask: {
      const std::size_t n = numel_of(input_shape_), m = keep_.size();
      auto yv = y.data();
      std::vector<double> out(batch * n, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i) out[b * n + keep_[i]] += yv[b * m + i];
      return Tensor(y.shape() == output_shape_ ? input_shape_ : Shape{batch, n}, std::move(out));
    }
    case Kind::saturate: break;
  }
  throw Error("unreachable operator kind");
}

Tensor MeasurementOperator::adjoint_differentiable(const Tensor& y) const {
  Tensor value = adjoint(y.detach());
  const Shape in_shape = value.shape();
  return Tensor::make_result(
      in_shape, value.to_vector(), {y},
      [op = *this, in_shape](std::span<const double> g, detail::GradSlots& slots) {
        Tensor back = op.apply(Tensor(in_shape, std::vector<double>(g.begin(), g.end())));
        auto& gy = *slots[0];
        for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += back.data()[i];
      },
      "adjoint");
}

Tensor MeasurementOperator::vjp(const Tensor& x, const Tensor& cotangent) const {
  Tensor leaf = x.detach(true);
  Tensor out = apply(leaf);
  if (out.numel() != cotangent.numel()) throw ShapeError("vjp: cotangent does not match the operator output");
  backward(out, cotangent.data());
  if (!leaf.has_grad()) return Tensor::zeros(x.shape());
  return Tensor(x.shape(), std::vector<double>(leaf.grad().begin(), leaf.grad().end()));
}

Eigen::MatrixXd MeasurementOperator::matrix() const {
  if (!linear()) throw ConfigError("matrix(): operator is not linear");
  const std::size_t n = numel_of(input_shape_), m = numel_of(output_shape_);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    auto col = apply(Tensor(input_shape_, e));
    for (std::size_t i = 0; i < m; ++i) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col.data()[i];
    e[j] = 0.0;
  }
  return a;
}

Measurement forward(const MeasurementOperator& op, const Tensor& x, Rng& rng) {
  if (x.shape() != op.input_shape()) {
    throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match operator domain " +
                     shape_str(op.input_shape()));
  }
  Measurement m;
  m.op_spec = op.spec();
  m.sigma_y = op.sigma_y();
  m.seed = rng.seed();
  auto clean = op.apply(x.detach());
  if (op.sigma_y() == 0.0) {
    m.y = clean;
    return m;
  }
  auto y = clean.to_vector();
  for (auto& v : y) v += op.sigma_y() * rng.normal();
  m.y = Tensor(clean.shape(), std::move(y));
  return m;
}

Measurement forward(const MeasurementOperator& op, const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return forward(op, x, rng);
}

void save_measurement(const std::filesystem::path& path, const Measurement& m) {
  save_tensor(path, m.y);
  nlohmann::json side = {{"operator", m.op_spec}, {"sigma_y", m.sigma_y}, {"seed", m.seed}};
  write_text(path.string() + ".json", side.dump(2));
}

Measurement load_measurement(const std::filesystem::path& path) {
  Measurement m;
  m.y = load_tensor(path);
  try {
    auto side = nlohmann::json::parse(read_text(path.string() + ".json"));
    m.op_spec = side.at("operator");
    m.sigma_y = side.at("sigma_y").get<double>();
    m.seed = side.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("measurement sidecar: ") + e.what());
  }
  return m;
}

}  // namespace equireg
