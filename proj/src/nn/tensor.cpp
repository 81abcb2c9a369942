#include "pedsense/nn/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "pedsense/error.hpp"

namespace pedsense::nn {

int shape_size(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_finite(const char* op, const Shape& shape,
                  const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw_divergence("nn.non_finite",
                       std::string(op) + " produced NaN/Inf, shape " +
                           shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  node->requires_grad = requires_grad;
  node->shape = std::move(shape);
  node->op = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t = zeros(std::move(shape), false);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (static_cast<int>(data.size()) != shape_size(shape)) {
    throw_input("nn.shape_mismatch", "data length does not match shape " +
                                         shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.data() = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
  if (size() != 1) {
    throw_input("nn.not_scalar", "item() on tensor of shape " +
                                     shape_str(shape()));
  }
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

void Tensor::backward() {
  if (size() != 1) {
    throw_input("nn.not_scalar", "backward() requires a scalar root");
  }
  // Topological order via iterative DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Tensor make_op(std::string op, Shape shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
  bool requires_grad = false;
  for (const auto& p : parents) requires_grad |= p.requires_grad();
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(shape_size(node->shape)), 0.0);
  node->requires_grad = requires_grad;
  node->op = std::move(op);
  if (requires_grad) {
    node->grad.assign(node->value.size(), 0.0);
    node->backward_fn = std::move(backward_fn);
    for (auto& p : parents) node->parents.push_back(p.node());
  }
  return Tensor(std::move(node));
}

}  // namespace pedsense::nn
