#include "equireg/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace equireg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

enum class BinOp { add, sub, mul, div };

const char* binop_name(BinOp op) {
  switch (op) {
    case BinOp::add: return "add";
    case BinOp::sub: return "sub";
    case BinOp::mul: return "mul";
    case BinOp::div: return "div";
  }
  return "?";
}

double apply_bin(BinOp op, double x, double y) {
  switch (op) {
    case BinOp::add: return x + y;
    case BinOp::sub: return x - y;
    case BinOp::mul: return x * y;
    case BinOp::div: return x / y;
  }
  return 0.0;
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const bool same = a.shape() == b.shape();
  const bool b_scalar = !same && b.numel() == 1;
  const bool a_scalar = !same && !b_scalar && a.numel() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(binop_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcastable");
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel_of(out_shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = apply_bin(op, av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  }
  return Tensor::make_result(
      out_shape, std::move(out), {a, b},
      [a, b, op, a_scalar, b_scalar, n](std::span<const double> g, detail::GradSlots& slots) {
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < n; ++i) {
          const double x = av[a_scalar ? 0 : i];
          const double y = bv[b_scalar ? 0 : i];
          double da = 0.0, db = 0.0;
          switch (op) {
            case BinOp::add: da = 1.0; db = 1.0; break;
            case BinOp::sub: da = 1.0; db = -1.0; break;
            case BinOp::mul: da = y; db = x; break;
            case BinOp::div: da = 1.0 / y; db = -x / (y * y); break;
          }
          if (slots[0]) (*slots[0])[a_scalar ? 0 : i] += g[i] * da;
          if (slots[1]) (*slots[1])[b_scalar ? 0 : i] += g[i] * db;
        }
      },
      binop_name(op));
}

template <class F, class D>
Tensor unary(const Tensor& x, const char* name, F f, D deriv) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor result = Tensor::make_result(x.shape(), std::move(out), {x}, nullptr, name);
  if (!result.requires_grad()) return result;
  // The rule needs the output values, so it is attached after construction.
  std::weak_ptr<detail::Node> self = result.node();
  result.node()->backward = [x, deriv, self](std::span<const double> g, detail::GradSlots& slots) {
    auto xv = x.data();
    auto node = self.lock();
    const auto& yv = node->value;
    auto& gx = *slots[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  };
  return result;
}

// Source index along an axis of length n for a (possibly out-of-range)
// coordinate i; -1 means "outside, contributes zero".
long map_index(long i, long n, Padding padding) {
  if (i >= 0 && i < n) return i;
  switch (padding) {
    case Padding::zero: return -1;
    case Padding::circular: return ((i % n) + n) % n;
    case Padding::reflect: {
      if (n == 1) return 0;
      const long period = 2 * (n - 1);
      long m = ((i % period) + period) % period;
      return m >= n ? period - m : m;
    }
  }
  return -1;
}

struct ConvGeometry {
  std::size_t batch = 1, cin = 1, cout = 1, h = 0, w = 0, k = 0;
  Shape out_shape;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& kern, const char* op) {
  ConvGeometry g;
  if (kern.size() == 2) {
    if (kern[0] != kern[1]) throw ShapeError(std::string(op) + ": kernel must be square");
    g.k = kern[0];
    if (in.size() == 2) {
      g.h = in[0];
      g.w = in[1];
    } else if (in.size() == 3) {
      g.batch = in[0];
      g.h = in[1];
      g.w = in[2];
    } else {
      throw ShapeError(std::string(op) + ": input " + shape_str(in) + " unsupported for a 2-D kernel");
    }
    g.out_shape = in;
  } else if (kern.size() == 4) {
    if (kern[2] != kern[3]) throw ShapeError(std::string(op) + ": kernel must be square");
    g.k = kern[2];
    g.cout = kern[0];
    g.cin = kern[1];
    if (in.size() == 3) {
      if (in[0] != g.cin) throw ShapeError(std::string(op) + ": channel mismatch");
      g.h = in[1];
      g.w = in[2];
      g.out_shape = {g.cout, g.h, g.w};
    } else if (in.size() == 4) {
      if (in[1] != g.cin) throw ShapeError(std::string(op) + ": channel mismatch");
      g.batch = in[0];
      g.h = in[2];
      g.w = in[3];
      g.out_shape = {g.batch, g.cout, g.h, g.w};
    } else {
      throw ShapeError(std::string(op) + ": input " + shape_str(in) + " unsupported for a 4-D kernel");
    }
  } else {
    throw ShapeError(std::string(op) + ": kernel must be [k,k] or [Co,Ci,k,k]");
  }
  if (g.k % 2 == 0) throw ConfigError(std::string(op) + ": kernel size must be odd, got " + std::to_string(g.k));
  return g;
}

// index[tap * HW + p] = source pixel of tap `tap` for output pixel p, or -1.
std::vector<long> conv_index(const ConvGeometry& g, Padding padding) {
  const long k = static_cast<long>(g.k), c = k / 2;
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  std::vector<long> index(g.k * g.k * g.h * g.w);
  for (long a = 0; a < k; ++a) {
    for (long b = 0; b < k; ++b) {
      long* row = &index[(a * k + b) * h * w];
      for (long i = 0; i < h; ++i) {
        const long si = map_index(i + a - c, h, padding);
        for (long j = 0; j < w; ++j) {
          const long sj = map_index(j + b - c, w, padding);
          row[i * w + j] = (si < 0 || sj < 0) ? -1 : si * w + sj;
        }
      }
    }
  }
  return index;
}

void im2col(const double* in, const ConvGeometry& g, const std::vector<long>& index, RowMat& col) {
  const std::size_t hw = g.h * g.w, kk = g.k * g.k;
  col.resize(static_cast<long>(g.cin * kk), static_cast<long>(hw));
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = in + ci * hw;
    for (std::size_t tap = 0; tap < kk; ++tap) {
      double* dst = col.data() + (ci * kk + tap) * hw;
      const long* src = &index[tap * hw];
      for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] < 0 ? 0.0 : plane[src[p]];
    }
  }
}

void col2im_add(const RowMat& col, const ConvGeometry& g, const std::vector<long>& index, double* out) {
  const std::size_t hw = g.h * g.w, kk = g.k * g.k;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = out + ci * hw;
    for (std::size_t tap = 0; tap < kk; ++tap) {
      const double* src = col.data() + (ci * kk + tap) * hw;
      const long* dst = &index[tap * hw];
      for (std::size_t p = 0; p < hw; ++p) {
        if (dst[p] >= 0) plane[dst[p]] += src[p];
      }
    }
  }
}

void conv_forward_into(std::span<const double> in, std::span<const double> kern, const ConvGeometry& g,
                       const std::vector<long>& index, double* out) {
  const std::size_t hw = g.h * g.w;
  CMapMat kmat(kern.data(), static_cast<long>(g.cout), static_cast<long>(g.cin * g.k * g.k));
  RowMat col;
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(in.data() + b * g.cin * hw, g, index, col);
    MapMat o(out + b * g.cout * hw, static_cast<long>(g.cout), static_cast<long>(hw));
    o.noalias() = kmat * col;
  }
}

void conv_adjoint_into(std::span<const double> gout, std::span<const double> kern, const ConvGeometry& g,
                       const std::vector<long>& index, double* gin) {
  const std::size_t hw = g.h * g.w;
  CMapMat kmat(kern.data(), static_cast<long>(g.cout), static_cast<long>(g.cin * g.k * g.k));
  RowMat col;
  for (std::size_t b = 0; b < g.batch; ++b) {
    CMapMat go(gout.data() + b * g.cout * hw, static_cast<long>(g.cout), static_cast<long>(hw));
    col.noalias() = kmat.transpose() * go;
    col2im_add(col, g, index, gin + b * g.cin * hw);
  }
}

void conv_kernel_grad_into(std::span<const double> in, std::span<const double> gout, const ConvGeometry& g,
                           const std::vector<long>& index, double* gk) {
  const std::size_t hw = g.h * g.w;
  MapMat gkm(gk, static_cast<long>(g.cout), static_cast<long>(g.cin * g.k * g.k));
  RowMat col;
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(in.data() + b * g.cin * hw, g, index, col);
    CMapMat go(gout.data() + b * g.cout * hw, static_cast<long>(g.cout), static_cast<long>(hw));
    gkm.noalias() += go * col.transpose();
  }
}

// Validates the trailing grid of x and returns (outer, H, W).
std::tuple<std::size_t, std::size_t, std::size_t> grid_dims(const Tensor& x, const char* op) {
  if (x.dim() < 2) throw ShapeError(std::string(op) + ": needs at least 2 axes, got " + shape_str(x.shape()));
  const std::size_t h = x.shape()[x.dim() - 2], w = x.shape()[x.dim() - 1];
  return {x.numel() / (h * w), h, w};
}

}  // namespace

Padding parse_padding(const std::string& name) {
  if (name == "zero") return Padding::zero;
  if (name == "reflect") return Padding::reflect;
  if (name == "circular") return Padding::circular;
  throw ConfigError("unknown padding mode '" + name + "'");
}

const char* padding_name(Padding p) {
  switch (p) {
    case Padding::zero: return "zero";
    case Padding::reflect: return "reflect";
    case Padding::circular: return "circular";
  }
  return "?";
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div); }
Tensor add(const Tensor& a, double b) { return binary(a, Tensor::scalar(b), BinOp::add); }
Tensor mul(const Tensor& a, double b) { return binary(a, Tensor::scalar(b), BinOp::mul); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.dim() == 1, b_vec = b.dim() == 1;
  if (a.dim() > 2 || b.dim() > 2 || (a_vec && b_vec)) {
    throw ShapeError("matmul: unsupported shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const long m = a_vec ? 1 : static_cast<long>(a.shape()[0]);
  const long k = static_cast<long>(a_vec ? a.shape()[0] : a.shape()[1]);
  const long kb = static_cast<long>(b.shape()[0]);
  const long n = b_vec ? 1 : static_cast<long>(b.shape()[1]);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape;
  if (a_vec) out_shape = {static_cast<std::size_t>(n)};
  else if (b_vec) out_shape = {static_cast<std::size_t>(m)};
  else out_shape = {static_cast<std::size_t>(m), static_cast<std::size_t>(n)};

  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [a, b, m, k, n](std::span<const double> g, detail::GradSlots& slots) {
        CMapMat gm(g.data(), m, n);
        if (slots[0]) MapMat(slots[0]->data(), m, k).noalias() += gm * CMapMat(b.data().data(), k, n).transpose();
        if (slots[1]) MapMat(slots[1]->data(), k, n).noalias() += CMapMat(a.data().data(), m, k).transpose() * gm;
      },
      "matmul");
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, Padding padding) {
  auto g = conv_geometry(input.shape(), kernel.shape(), "conv2d");
  auto index = std::make_shared<std::vector<long>>(conv_index(g, padding));
  std::vector<double> out(numel_of(g.out_shape));
  conv_forward_into(input.data(), kernel.data(), g, *index, out.data());
  return Tensor::make_result(
      g.out_shape, std::move(out), {input, kernel},
      [input, kernel, g, index](std::span<const double> grad, detail::GradSlots& slots) {
        if (slots[0]) conv_adjoint_into(grad, kernel.data(), g, *index, slots[0]->data());
        if (slots[1]) conv_kernel_grad_into(input.data(), grad, g, *index, slots[1]->data());
      },
      "conv2d");
}

Tensor conv2d_adjoint(const Tensor& output_grad, const Tensor& kernel, Padding padding) {
  // Shapes of input and output coincide for the depthwise/2-D forms; for the
  // channel-mixing form the adjoint maps Co channels back to Ci.
  ConvGeometry g;
  Shape in_shape;
  if (kernel.dim() == 4) {
    const auto& s = output_grad.shape();
    if (s.size() == 3) in_shape = {kernel.shape()[1], s[1], s[2]};
    else if (s.size() == 4) in_shape = {s[0], kernel.shape()[1], s[2], s[3]};
    else throw ShapeError("conv2d_adjoint: unsupported shape " + shape_str(s));
    g = conv_geometry(in_shape, kernel.shape(), "conv2d_adjoint");
    if (g.out_shape != output_grad.shape()) throw ShapeError("conv2d_adjoint: channel mismatch");
  } else {
    in_shape = output_grad.shape();
    g = conv_geometry(in_shape, kernel.shape(), "conv2d_adjoint");
  }
  auto index = std::make_shared<std::vector<long>>(conv_index(g, padding));
  std::vector<double> out(numel_of(in_shape), 0.0);
  conv_adjoint_into(output_grad.data(), kernel.data(), g, *index, out.data());
  return Tensor::make_result(
      in_shape, std::move(out), {output_grad, kernel},
      [output_grad, kernel, g, index](std::span<const double> grad, detail::GradSlots& slots) {
        if (slots[0]) {
          std::vector<double> tmp(output_grad.numel(), 0.0);
          conv_forward_into(grad, kernel.data(), g, *index, tmp.data());
          for (std::size_t i = 0; i < tmp.size(); ++i) (*slots[0])[i] += tmp[i];
        }
        if (slots[1]) conv_kernel_grad_into(grad, output_grad.data(), g, *index, slots[1]->data());
      },
      "conv2d_adjoint");
}

Tensor pad(const Tensor& x, std::size_t amount, Padding padding) {
  auto [outer, h, w] = grid_dims(x, "pad");
  const std::size_t ph = h + 2 * amount, pw = w + 2 * amount;
  std::vector<long> index(ph * pw);
  for (std::size_t i = 0; i < ph; ++i) {
    const long si = map_index(static_cast<long>(i) - static_cast<long>(amount), static_cast<long>(h), padding);
    for (std::size_t j = 0; j < pw; ++j) {
      const long sj = map_index(static_cast<long>(j) - static_cast<long>(amount), static_cast<long>(w), padding);
      index[i * pw + j] = (si < 0 || sj < 0) ? -1 : si * static_cast<long>(w) + sj;
    }
  }
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = ph;
  out_shape[x.dim() - 1] = pw;
  auto xv = x.data();
  std::vector<double> out(outer * ph * pw, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t p = 0; p < ph * pw; ++p) {
      if (index[p] >= 0) out[o * ph * pw + p] = xv[o * h * w + index[p]];
    }
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {x},
      [index, outer = outer, h = h, w = w, ph, pw](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t p = 0; p < ph * pw; ++p) {
            if (index[p] >= 0) gx[o * h * w + index[p]] += g[o * ph * pw + p];
          }
        }
      },
      "pad");
}

Tensor crop(const Tensor& x, std::size_t amount) {
  auto [outer, h, w] = grid_dims(x, "crop");
  if (2 * amount >= h || 2 * amount >= w) throw ShapeError("crop: amount too large for " + shape_str(x.shape()));
  const std::size_t ch = h - 2 * amount, cw = w - 2 * amount;
  std::vector<std::size_t> index;
  index.reserve(outer * ch * cw);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < ch; ++i) {
      for (std::size_t j = 0; j < cw; ++j) index.push_back(o * h * w + (i + amount) * w + (j + amount));
    }
  }
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = ch;
  out_shape[x.dim() - 1] = cw;
  return gather(x, index, std::move(out_shape));
}

Tensor downsample(const Tensor& x, std::size_t factor) {
  auto [outer, h, w] = grid_dims(x, "downsample");
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw ConfigError("downsample: factor " + std::to_string(factor) + " does not divide " + shape_str(x.shape()));
  }
  const std::size_t oh = h / factor, ow = w / factor;
  const double scale = 1.0 / static_cast<double>(factor * factor);
  auto xv = x.data();
  std::vector<double> out(outer * oh * ow, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out[o * oh * ow + (i / factor) * ow + j / factor] += scale * xv[o * h * w + i * w + j];
      }
    }
  }
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = oh;
  out_shape[x.dim() - 1] = ow;
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {x},
      [outer = outer, h = h, w = w, oh, ow, factor, scale](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              gx[o * h * w + i * w + j] += scale * g[o * oh * ow + (i / factor) * ow + j / factor];
            }
          }
        }
      },
      "downsample");
}

Tensor upsample(const Tensor& x, std::size_t factor) {
  auto [outer, h, w] = grid_dims(x, "upsample");
  if (factor == 0) throw ConfigError("upsample: factor must be positive");
  const std::size_t uh = h * factor, uw = w * factor;
  std::vector<std::size_t> index;
  index.reserve(outer * uh * uw);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < uh; ++i) {
      for (std::size_t j = 0; j < uw; ++j) index.push_back(o * h * w + (i / factor) * w + j / factor);
    }
  }
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = uh;
  out_shape[x.dim() - 1] = uw;
  return gather(x, index, std::move(out_shape));
}

Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape shape) {
  if (numel_of(shape) != index.size()) throw ShapeError("gather: index count does not match result shape");
  auto xv = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return Tensor::make_result(
      std::move(shape), std::move(out), {x},
      [idx](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += g[i];
      },
      "gather");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result(
      Shape{}, {s}, {x},
      [](std::span<const double> g, detail::GradSlots& slots) {
        for (auto& v : *slots[0]) v += g[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return mul(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw NumericError("sqrt: negative input");
  }
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor sq_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return Tensor::make_result(
      Shape{}, {s}, {x},
      [x](std::span<const double> g, detail::GradSlots& slots) {
        auto xv = x.data();
        auto& gx = *slots[0];
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g[0] * xv[i];
      },
      "sq_norm");
}

Tensor l2_norm(const Tensor& x) { return sqrt(sq_norm(x)); }

Tensor flip_kernel(const Tensor& kernel) {
  auto [outer, h, w] = grid_dims(kernel, "flip_kernel");
  std::vector<std::size_t> index;
  index.reserve(kernel.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) index.push_back(o * h * w + (h - 1 - i) * w + (w - 1 - j));
    }
  }
  return gather(kernel, index, kernel.shape());
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace equireg
