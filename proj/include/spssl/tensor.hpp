#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spssl/errors.hpp"

namespace spssl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;     // leaf grad populated by a backward pass
  bool backward_done = false;  // this node was already used as a loss root
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// RAII switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage and graph history. Use clone()
/// for an independent deep copy and detach() to cut the graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    validate_shape(shape);
    auto node = std::make_shared<detail::Node<T>>();
    node->value.assign(numel_of(shape), fill);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    validate_shape(shape);
    if (numel_of(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T* ptr() { return node_->value.data(); }
  const T* ptr() const { return node_->value.data(); }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw StateError("set_requires_grad: only leaf tensors");
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }

  /// Gradient values, or zeros when no gradient reached this tensor.
  std::vector<T> grad_or_zeros() const {
    return has_grad() ? node_->grad : std::vector<T>(numel(), T(0));
  }

  void zero_grad() {
    node_->grad.clear();
    node_->grad_ready = false;
  }

  Tensor detach() const { return from(shape(), node_->value, false); }

  Tensor clone(bool keep_requires_grad = true) const {
    return from(shape(), node_->value, keep_requires_grad && requires_grad());
  }

  bool all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(), [](T v) { return std::isfinite(v); });
  }

  std::string_view op() const { return node_->op; }

  /// Reverse-mode pass from a scalar loss.
  void backward();

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + to_string(shape));
    }
  }

  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Nodes reachable from `root` that participate in differentiation, in
/// execution (topological) order.
template <typename T>
std::vector<detail::Node<T>*> graph_of(const Tensor<T>& root) {
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  auto* start = root.node().get();
  if (!start->requires_grad) return order;
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void Tensor<T>::backward() {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(shape()));
  }
  if (!requires_grad()) throw StateError("backward: loss does not require grad");
  if (node_->backward_done) throw StateError("backward: called twice on the same graph");

  auto order = graph_of(*this);
  for (auto* n : order) {
    if (n->is_leaf() && n->grad_ready) {
      throw StateError("backward: leaf gradient already populated; call zero_grad() first");
    }
  }
  node_->backward_done = true;
  node_->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf()) {
      n->grad_buffer();
      n->grad_ready = true;
      continue;
    }
    if (!n->grad.empty() && n->backward) n->backward(*n);
    // Interior gradients are not needed past this point.
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

namespace detail {

/// Builds an op result, wiring it into the graph when any input tracks grads.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  const bool track = grad_mode_enabled &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& n) { return n->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

}  // namespace spssl
