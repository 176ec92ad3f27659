#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "equireg/tensor.hpp"

namespace equireg {

enum class Padding { zero, reflect, circular };

Padding parse_padding(const std::string& name);
const char* padding_name(Padding p);

// Elementwise arithmetic. Operands must have equal shapes, or one of them
// must hold a single element (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return mul(a, 1.0 / b); }
inline Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

/// [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]; [k]x[k,n] -> [n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Same-size 2-D cross-correlation with an odd square kernel.
///   input [H,W]        kernel [k,k]           -> [H,W]
///   input [C,H,W]      kernel [k,k]           -> [C,H,W]  (per channel)
///   input [Ci,H,W]     kernel [Co,Ci,k,k]     -> [Co,H,W]
///   input [B,Ci,H,W]   kernel [Co,Ci,k,k]     -> [B,Co,H,W]
Tensor conv2d(const Tensor& input, const Tensor& kernel, Padding padding);

/// Adjoint of conv2d with respect to its input (same shape conventions).
Tensor conv2d_adjoint(const Tensor& output_grad, const Tensor& kernel, Padding padding);

/// Pads the two trailing axes by `amount` on every side.
Tensor pad(const Tensor& x, std::size_t amount, Padding padding);
/// Removes `amount` entries from every side of the two trailing axes.
Tensor crop(const Tensor& x, std::size_t amount);

/// Area-average downsampling of the two trailing axes by `factor`.
Tensor downsample(const Tensor& x, std::size_t factor);
/// Nearest-neighbour upsampling of the two trailing axes by `factor`.
Tensor upsample(const Tensor& x, std::size_t factor);

/// out[i] = x[index[i]]; the result takes `shape`.
Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
/// Elementwise sqrt. The derivative at an exact zero is taken as 0.
Tensor sqrt(const Tensor& x);
/// Sum of squares.
Tensor sq_norm(const Tensor& x);
/// Euclidean norm, sqrt(sq_norm(x)).
Tensor l2_norm(const Tensor& x);

/// Entry-wise flip of the kernel's two trailing axes.
Tensor flip_kernel(const Tensor& kernel);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

}  // namespace equireg
