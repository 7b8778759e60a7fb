#include "dpfusion/tensor.hpp"

#include <cassert>
#include <cmath>
#include <unordered_set>

namespace dpfusion::ad {

namespace {

thread_local bool g_grad_enabled = true;

int numel(const std::vector<int>& shape) {
  int n = 1;
  for (int s : shape) n *= s;
  return n;
}

#ifndef NDEBUG
void debug_check_finite(const std::vector<double>& v) {
  for (double x : v) assert(std::isfinite(x) && "non-finite tensor entry");
}
#else
void debug_check_finite(const std::vector<double>&) {}
#endif

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

Node::~Node() {
  // Hand-rolled teardown: a chain of shared_ptr parents would otherwise
  // destruct recursively and overflow the stack on long tapes.
  std::vector<std::shared_ptr<Node>> stack;
  stack.swap(parents);
  while (!stack.empty()) {
    std::shared_ptr<Node> p = std::move(stack.back());
    stack.pop_back();
    if (p && p.use_count() == 1) {
      for (auto& gp : p->parents) stack.push_back(std::move(gp));
      p->parents.clear();
    }
  }
}

Tensor make_op(std::vector<int> shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  debug_check_finite(node->value);
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const auto& p : parents) {
      if (p.node()->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::constant(std::vector<double> values, std::vector<int> shape) {
  if (shape.empty()) shape = {static_cast<int>(values.size())};
  if (numel(shape) != static_cast<int>(values.size())) {
    throw InvalidInputError("tensor shape does not match value count");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  debug_check_finite(node->value);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return constant({v}, {1}); }

Tensor Tensor::zeros(std::vector<int> shape) {
  const int n = numel(shape);  // before the move: argument order is unspecified
  return constant(std::vector<double>(n, 0.0), std::move(shape));
}

Tensor Tensor::parameter(std::vector<double> values, std::vector<int> shape) {
  Tensor t = constant(std::move(values), std::move(shape));
  t.node_->requires_grad = true;
  t.node_->ensure_grad();
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1) throw UsageError("scalar_value on non-scalar tensor");
  return node_->value[0];
}

std::vector<double>& Tensor::values_mut() { return node_->value; }

std::vector<double>& Tensor::grad() {
  if (!node_->requires_grad) throw UsageError("grad on untracked tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (!node_ || !node_->requires_grad) {
    throw UsageError("backward on an untracked graph");
  }
  if (size() != 1) throw UsageError("backward requires a scalar loss");

  // Post-order DFS for a topological order, iterative on purpose.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : topo) n->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

Tensor Tensor::detach() const {
  return constant(node_->value, node_->shape);
}

Tensor Tensor::clone_leaf() const {
  return parameter(node_->value, node_->shape);
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidInputError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] + c;
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] * c;
  return make_op(a.shape(), std::move(v), {a}, [c](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * c;
  });
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.shape().size() != 2 || x.shape().size() != 1 ||
      w.shape()[1] != x.shape()[0]) {
    throw InvalidInputError("matvec: incompatible shapes");
  }
  const int rows = w.shape()[0];
  const int cols = w.shape()[1];
  std::vector<double> v(rows, 0.0);
  const auto& wv = w.values();
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = wv.data() + r * cols;
    for (int c = 0; c < cols; ++c) acc += row[c] * xv[c];
    v[r] = acc;
  }
  return make_op({rows}, std::move(v), {w, x}, [rows, cols](Node& self) {
    Node& pw = *self.parents[0];
    Node& px = *self.parents[1];
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (int r = 0; r < rows; ++r) {
        double g = self.grad[r];
        double* grow = pw.grad.data() + r * cols;
        for (int c = 0; c < cols; ++c) grow[c] += g * px.value[c];
      }
    }
    if (px.requires_grad) {
      px.ensure_grad();
      for (int r = 0; r < rows; ++r) {
        double g = self.grad[r];
        const double* row = pw.value.data() + r * cols;
        for (int c = 0; c < cols; ++c) px.grad[c] += g * row[c];
      }
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1) {
    throw InvalidInputError("concat: expects vectors");
  }
  const int na = a.size();
  const int nb = b.size();
  std::vector<double> v;
  v.reserve(na + nb);
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return make_op({na + nb}, std::move(v), {a, b}, [na, nb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int i = 0; i < na; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int i = 0; i < nb; ++i) pb.grad[i] += self.grad[na + i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) acc += a[i];
  return make_op({1}, {acc}, {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < pa.grad.size(); ++i)
      pa.grad[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / a.size()); }

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor tanh_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = std::tanh(a[i]);
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      pa.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.value[i];
      pa.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor exp_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = std::exp(a[i]);
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * self.value[i];
  });
}

Tensor log_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) {
    if (a[i] <= 0.0) throw InvalidInputError("log of non-positive value");
    v[i] = std::log(a[i]);
  }
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] / pa.value[i];
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] * a[i];
  return make_op(a.shape(), std::move(v), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * 2.0 * pa.value[i];
  });
}

Tensor clamp_t(const Tensor& a, double lo, double hi) {
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = std::clamp(a[i], lo, hi);
  return make_op(a.shape(), std::move(v), {a}, [lo, hi](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.value[i] > lo && pa.value[i] < hi)
        pa.grad[i] += self.grad[i];
    }
  });
}

Tensor min_t(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "min");
  std::vector<double> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a[i] < b[i] ? a[i] : b[i];
  return make_op(a.shape(), std::move(v), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      bool take_a = pa.value[i] < pb.value[i];
      Node& target = take_a ? pa : pb;
      if (target.requires_grad) {
        target.ensure_grad();
        target.grad[i] += self.grad[i];
      }
    }
  });
}

}  // namespace dpfusion::ad
