#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "equireg/error.hpp"

namespace equireg {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// Gradient buffers handed to a backward rule, one per input; nullptr when
// that input does not participate in differentiation.
using GradSlots = std::vector<std::vector<double>*>;
using BackwardRule = std::function<void(std::span<const double> grad_out, GradSlots& grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardRule backward;
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense float64 tensor, row-major. A Tensor is a cheap handle; copies share
/// the same immutable value buffer. Only the gradient buffer of a leaf is
/// ever mutated (by backward()).
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> data, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double operator[](std::size_t i) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad() const;

  /// New leaf holding the same values, disconnected from any tape.
  Tensor detach(bool requires_grad = false) const;
  /// Differentiable reshape; element count must match.
  Tensor reshape(Shape shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds the result of an op. A tape node is attached only when at least
  /// one input requires a gradient; the rule receives the output gradient
  /// and accumulates into the slots of the inputs that need it.
  static Tensor make_result(Shape shape, std::vector<double> value,
                            std::initializer_list<Tensor> inputs, detail::BackwardRule rule,
                            const char* op);
  static Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                            detail::BackwardRule rule, const char* op);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Throws NumericError naming `where` when any entry is NaN/Inf.
void require_finite(std::span<const double> values, const char* where);

}  // namespace equireg
