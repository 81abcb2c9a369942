#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pedsense::nn {

using Shape = std::vector<int>;

int shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into the parents' grads.
  std::function<void(Node&)> backward_fn;
};

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int size() const { return static_cast<int>(node_->value.size()); }
  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  void zero_grad();

  // Reverse pass from a scalar root; seeds d(root)/d(root) = 1.
  void backward();

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op(std::string op, Shape shape,
                        std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn);
};

// Creates a result node wired to its parents; requires_grad propagates.
Tensor make_op(std::string op, Shape shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn);

// Throws Error(numeric) naming the op when any value is NaN/Inf.
void check_finite(const char* op, const Shape& shape,
                  const std::vector<double>& values);

}  // namespace pedsense::nn
