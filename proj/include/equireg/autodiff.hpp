#pragma once

#include <functional>
#include <span>

#include "equireg/tensor.hpp"

namespace equireg {

/// Reverse pass from a scalar loss. Every reachable leaf with requires_grad
/// accumulates d(loss)/d(leaf); interior tape nodes are released afterwards.
void backward(const Tensor& loss);

/// Vector-Jacobian product: seeds `output` with `cotangent` instead of 1.
void backward(const Tensor& output, std::span<const double> cotangent);

/// Gradient of a scalar function at x, computed on a fresh leaf.
std::vector<double> gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

/// Max over coordinates of |autodiff - central difference| / (|central difference| + 1e-12).
double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace equireg
