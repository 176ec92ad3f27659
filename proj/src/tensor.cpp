#include "equireg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace equireg {

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void require_finite(std::span<const double> values, const char* where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << where << ": non-finite value at index " << i;
      throw NumericError(msg.str());
    }
  }
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel_of(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  }
  require_finite(data, "Tensor");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  Shape shape{data.size()};
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::vector<double> Tensor::to_vector() const { return node_->value; }
double Tensor::operator[](std::size_t i) const { return node_->value.at(i); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() const { node_->grad.clear(); }

Tensor Tensor::detach(bool requires_grad) const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::reshape(Shape shape) const {
  if (numel_of(shape) != numel()) {
    throw ShapeError("reshape " + shape_str(this->shape()) + " -> " + shape_str(shape));
  }
  return make_result(
      std::move(shape), node_->value, {*this},
      [](std::span<const double> g, detail::GradSlots& slots) {
        auto& gx = *slots[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                           detail::BackwardRule rule, const char* op) {
  return make_result(std::move(shape), std::move(value), std::vector<Tensor>(inputs), std::move(rule), op);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                           detail::BackwardRule rule, const char* op) {
  if (numel_of(shape) != value.size()) {
    throw ShapeError(std::string(op) + ": result shape " + shape_str(shape) + " holds " +
                     std::to_string(value.size()) + " values");
  }
  require_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

}  // namespace equireg
