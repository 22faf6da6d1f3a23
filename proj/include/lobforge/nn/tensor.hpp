#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lobforge/core/error.hpp"

namespace lobforge::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Graph node: value, lazily allocated gradient, and the closure that pushes
// this node's gradient into its parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

 private:
  bool prev_;
};

// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw InvariantError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                           to_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const {
    if (size() != 1) throw InvariantError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  // Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& grad_buffer() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  // Reverse-mode sweep from a scalar (or seeded) output.
  void backward() const {
    if (size() != 1) throw InvariantError("backward() needs a scalar output, got " + to_string(shape()));
    backward(std::vector<double>{1.0});
  }

  void backward(const std::vector<double>& seed) const {
    if (seed.size() != size()) throw InvariantError("backward seed size mismatch");
    if (!requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    auto& g = node_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // Interior gradients are not needed once propagated.
    for (Node* n : order) {
      if (n->backward) std::vector<double>().swap(n->grad);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvariantError(std::string("non-finite value produced by ") + op);
  }
}

// Creates the output node of an op. The backward closure is attached only
// when recording is on and some input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, const char* op,
                          std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (NoGradGuard::enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

}  // namespace lobforge::nn
