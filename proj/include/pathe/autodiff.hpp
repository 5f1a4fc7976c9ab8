#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pathe/tensor.hpp"

namespace pathe::ad {

template <typename T>
class Tape;

// Graph node: forward value, gradient buffer, and the closure that pushes
// this node's gradient into its parents.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::function<void(const Tensor<T>&)> backward;

  // Gradient buffer, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  // Zero tensor when no gradient reached this node.
  Tensor<T> grad() const {
    return node_->has_grad ? node_->grad : Tensor<T>(node_->value.shape());
  }

  Tape<T>* tape() const noexcept { return tape_; }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

// Trainable leaf that outlives tapes. Gradients accumulate across backward
// passes until zero_grad.
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Tensor<T> init) : name_(std::move(name)), node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(init);
    node_->requires_grad = true;
  }

  const std::string& name() const noexcept { return name_; }
  Tensor<T>& value() noexcept { return node_->value; }
  const Tensor<T>& value() const noexcept { return node_->value; }
  Tensor<T>& grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->has_grad) node_->grad.fill(T{0});
  }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::string name_;
  std::shared_ptr<Node<T>> node_;
};

// Owns parameters with stable addresses, in registration order.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> init) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(init)));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p->name() == name) return p.get();
    }
    return nullptr;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  // Total number of scalar weights.
  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p->value().size();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

// Define-by-run recorder. Nodes are appended in creation order, which is a
// topological order, so backward walks the list in reverse.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var<T>(std::move(node), this);
  }

  // Differentiable leaf that is not a parameter (gradient-check inputs).
  Var<T> variable(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    leaves_.push_back(node);
    return Var<T>(std::move(node), this);
  }

  Var<T> watch(Parameter<T>& param) { return Var<T>(param.node(), this); }

  Var<T> record(Tensor<T> value, bool requires_grad,
                std::function<void(const Tensor<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    if (requires_grad) node->backward = std::move(backward);
    nodes_.push_back(node);
    return Var<T>(std::move(node), this);
  }

  // Seeds d(root)/d(root) = 1 and propagates. Returns the number of nodes
  // whose backward closure ran.
  std::size_t backward(const Var<T>& root) {
    if (root.value().size() != 1) {
      throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return 0;
    root.node()->grad_buffer()[0] += T{1};
    std::size_t visited = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& node = **it;
      if (!node.requires_grad || !node.has_grad || !node.backward) continue;
      node.backward(node.grad);
      ++visited;
    }
    return visited;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::vector<std::shared_ptr<Node<T>>> leaves_;
};

}  // namespace pathe::ad
