#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Var is a handle to a node holding a value, an optional gradient and a
// closure that pushes the node's gradient into its parents. Graphs are built
// eagerly by the free functions in layers.hpp and friends; backward() walks
// them in reverse topological order. Inference paths run under NoGradGuard so
// no closures or intermediate buffers are retained.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lingedit/tensor.hpp"

namespace lingedit {

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool has_grad() const { return grad.size() != 0; }

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!has_grad()) {
      grad = g;
    } else {
      grad += g;
    }
  }

  Matrix<Scalar>& grad_buffer() {
    if (!has_grad()) grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    return grad;
  }
};

template <typename Scalar>
class Var {
 public:
  using NodeType = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Var constant(Matrix<Scalar> value, Shape shape) {
    auto node = std::make_shared<NodeType>();
    node->value = std::move(value);
    node->shape = shape;
    return Var(std::move(node));
  }

  static Var constant(Matrix<Scalar> value) {
    const Shape s = matrix_shape(value.rows(), value.cols());
    return constant(std::move(value), s);
  }

  static Var leaf(Matrix<Scalar> value, Shape shape) {
    Var v = constant(std::move(value), shape);
    v.node_->requires_grad = true;
    return v;
  }

  static Var leaf(Matrix<Scalar> value) {
    const Shape s = matrix_shape(value.rows(), value.cols());
    return leaf(std::move(value), s);
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix<Scalar>& value() const { return node_->value; }
  Matrix<Scalar>& mutable_value() { return node_->value; }
  const Matrix<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad() { node_->grad.resize(0, 0); }
  const Shape& shape() const { return node_->shape; }
  bool requires_grad() const { return node_->requires_grad; }
  NodeType* node() const { return node_.get(); }
  const std::shared_ptr<NodeType>& shared() const { return node_; }

  Scalar item() const { return node_->value(0, 0); }

  Var detach() const { return constant(node_->value, node_->shape); }

 private:
  std::shared_ptr<NodeType> node_;
};

// Records an operation result. Parents that do not require gradients are
// dropped, and if none require them (or grad mode is off) the closure is not
// retained.
template <typename Scalar>
Var<Scalar> make_result(Matrix<Scalar> value, Shape shape, std::vector<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->shape = shape;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.shared());
      node->backward = std::move(backward);
    }
  }
  return Var<Scalar>(std::move(node));
}

// Seeds d(root)/d(root) = 1 (root must be 1x1 unless seed is given) and
// accumulates gradients into every reachable node that requires them.
template <typename Scalar>
void backward(const Var<Scalar>& root, const Matrix<Scalar>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  if (seed) {
    root.node()->accumulate(*seed);
  } else {
    require(root.value().size() == 1, "backward: root must be a scalar");
    root.node()->accumulate(Matrix<Scalar>::Ones(1, 1));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

}  // namespace lingedit
