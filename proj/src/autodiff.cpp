#include "equireg/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace equireg {

namespace {

using detail::Node;

// Post-order DFS over tracked nodes; reversed it is a valid processing order.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void run_backward(const Tensor& output, std::span<const double> seed) {
  Node* root = output.node().get();
  if (!root->requires_grad) return;
  auto order = topological_order(root);

  std::vector<std::vector<double>> interior(order.size());
  std::unordered_map<Node*, std::vector<double>*> buffer;
  buffer.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    Node* n = order[i];
    if (n->is_leaf()) {
      if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
      buffer[n] = &n->grad;
    } else {
      interior[i].assign(n->value.size(), 0.0);
      buffer[n] = &interior[i];
    }
  }
  auto& root_grad = *buffer[root];
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  detail::GradSlots slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    slots.assign(n->parents.size(), nullptr);
    for (std::size_t p = 0; p < n->parents.size(); ++p) {
      Node* parent = n->parents[p].get();
      if (parent->requires_grad) slots[p] = buffer.at(parent);
    }
    n->backward(*buffer[n], slots);
  }
  // Release the tape: interior nodes drop their parents and rules.
  for (Node* n : order) {
    if (!n->is_leaf()) {
      n->backward = nullptr;
      n->parents.clear();
      n->requires_grad = false;
    }
  }
  for (Node* n : order) {
    if (n->is_leaf()) require_finite(n->grad, "backward");
  }
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  const double one = 1.0;
  run_backward(loss, std::span<const double>(&one, 1));
}

void backward(const Tensor& output, std::span<const double> cotangent) {
  if (cotangent.size() != output.numel()) {
    throw ShapeError("cotangent size " + std::to_string(cotangent.size()) + " does not match output " +
                     shape_str(output.shape()));
  }
  run_backward(output, cotangent);
}

std::vector<double> gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor leaf = x.detach(true);
  Tensor out = f(leaf);
  backward(out);
  if (!leaf.has_grad()) return std::vector<double>(x.numel(), 0.0);
  return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
}

double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  auto analytic = gradient(f, x);
  auto base = x.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    double fp = f(Tensor(x.shape(), std::move(plus))).item();
    double fm = f(Tensor(x.shape(), std::move(minus))).item();
    double fd = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-12));
  }
  return worst;
}

}  // namespace equireg
