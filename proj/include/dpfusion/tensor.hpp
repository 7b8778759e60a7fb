#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dpfusion/common.hpp"

// Reverse-mode differentiation kernel. Tensors are shared handles to graph
// nodes; ops build the graph only while grad mode is on and an input is
// tracked, so rollouts that need no gradients cost plain arithmetic.

namespace dpfusion::ad {

bool grad_enabled();

// RAII switch disabling graph recording in the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  ~Node();  // iterative teardown; graphs can be deeper than the stack

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::vector<double> values,
                         std::vector<int> shape = {});
  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  // Tracked leaf; participates in every gradient computation it reaches.
  static Tensor parameter(std::vector<double> values,
                          std::vector<int> shape = {});

  bool defined() const { return node_ != nullptr; }
  int size() const { return static_cast<int>(node_->value.size()); }
  const std::vector<int>& shape() const { return node_->shape; }
  const std::vector<double>& values() const { return node_->value; }
  double operator[](int i) const { return node_->value[i]; }
  double scalar_value() const;
  bool requires_grad() const { return node_->requires_grad; }

  // Leaf-only mutation; used by optimizers, checkpoint loading, and tests.
  std::vector<double>& values_mut();
  std::vector<double>& grad();
  void zero_grad();

  // Reverse pass from a tracked scalar; accumulates into every reachable
  // tracked leaf's grad.
  void backward() const;

  Tensor detach() const;
  Tensor clone_leaf() const;  // deep copy as an independent parameter

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend Tensor make_op(std::vector<int> shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(Node&)> backprop);
  std::shared_ptr<Node> node_;
};

// elementwise; shapes must match
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// W: {rows, cols}, x: {cols} -> {rows}
Tensor matvec(const Tensor& w, const Tensor& x);
Tensor concat(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor tanh_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor square(const Tensor& a);

// Pass-through gradient strictly inside (lo, hi), zero outside.
Tensor clamp_t(const Tensor& a, double lo, double hi);
// Elementwise min; ties route the gradient to b.
Tensor min_t(const Tensor& a, const Tensor& b);

}  // namespace dpfusion::ad
