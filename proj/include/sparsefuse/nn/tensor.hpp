#ifndef SPARSEFUSE_NN_TENSOR_HPP
#define SPARSEFUSE_NN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "sparsefuse/common.hpp"

namespace sparsefuse::nn {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor node. The operator set is closed: every op wires an
// explicit backward closure, there is no generic graph compiler. Gradients
// accumulate into `grad` slots; `backward()` walks the graph once in reverse
// topological order.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  // Graph linkage (set only while grad mode is on and a parent needs grads).
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backprop;

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { grad.assign(values.size(), 0.0); }
};

inline int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
}

inline TensorPtr make_tensor(std::vector<int> shape) {
  auto t = std::make_shared<Tensor>();
  t->values.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  t->shape = std::move(shape);
  return t;
}

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values) {
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw ConfigError("make_tensor: value count does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  return t;
}

inline TensorPtr make_param(std::vector<int> shape, std::vector<double> values) {
  auto t = make_tensor(std::move(shape), std::move(values));
  t->requires_grad = true;
  return t;
}

// Grad mode: evaluation paths switch it off to skip graph construction.
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }

 private:
  bool prev_;
};

// Creates the result node of an op over `parents`; `fn` is the pull-style
// backward, reading result.grad and accumulating into parent grads.
inline TensorPtr make_op(std::vector<int> shape, std::vector<TensorPtr> parents,
                         std::function<void(Tensor&)> fn) {
  auto t = make_tensor(std::move(shape));
  bool need = false;
  if (grad_mode())
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    t->requires_grad = true;
    t->parents = std::move(parents);
    t->backprop = std::move(fn);
  }
  return t;
}

inline TensorPtr detach(const TensorPtr& x) {
  auto t = std::make_shared<Tensor>();
  t->shape = x->shape;
  t->values = x->values;
  return t;
}

// Reverse-mode sweep from a scalar root (or with an explicit seed).
inline void backward(const TensorPtr& root, const std::vector<double>* seed = nullptr) {
  if (!root->requires_grad) return;
  if (!seed && root->size() != 1)
    throw ConfigError("backward: root must be scalar unless a seed is given");

  // Iterative topological order over parent edges.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  struct Frame {
    Tensor* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Tensor* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  if (seed) {
    if (seed->size() != root->values.size())
      throw ConfigError("backward: seed size mismatch");
    for (size_t i = 0; i < seed->size(); ++i) root->grad[i] += (*seed)[i];
  } else {
    root->grad[0] += 1.0;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* node = *it;
    if (node->backprop) {
      for (auto& p : node->parents)
        if (p->requires_grad) p->ensure_grad();
      node->backprop(*node);
    }
  }
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_TENSOR_HPP
