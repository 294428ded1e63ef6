#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every value produced during a forward pass together with a
// closure that pushes the output cotangent back to the inputs. Parameters are
// bound by address, so gradients can be looked up against the weight structs
// that own them.

#include <cassert>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mambafoley/types.hpp"

namespace mambafoley {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  // Receives the cotangent of the node's output.
  using Backward = std::function<void(const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Binds a parameter; repeated calls with the same matrix return the same node.
  Var<Scalar> parameter(const Mat& weights) {
    if (auto it = param_ids_.find(&weights); it != param_ids_.end()) {
      return Var<Scalar>{this, it->second};
    }
    Var<Scalar> v = push(weights, true, nullptr);
    param_ids_.emplace(&weights, v.id);
    param_order_.push_back(&weights);
    return v;
  }

  /// Records an op result. The backward closure runs only if some input
  /// requires a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Adds `g` into the cotangent of `v` (no-op for constants).
  template <typename Derived>
  void accumulate(Var<Scalar> v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[static_cast<std::size_t>(v.id)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs all closures in
  /// reverse recording order.
  void backward(Var<Scalar> root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw std::invalid_argument("Tape::backward: root must be a scalar");
    }
    backward(root, Mat::Ones(1, 1));
  }

  void backward(Var<Scalar> root, const Mat& seed) {
    accumulate(root, seed);
    for (int id = root.id; id >= 0; --id) {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.backward || node.grad.size() == 0) continue;
      node.backward(node.grad);
    }
  }

  /// Gradient of a bound parameter; zero matrix if it received none.
  Mat gradient(const Mat& weights) const {
    auto it = param_ids_.find(&weights);
    if (it == param_ids_.end()) return Mat::Zero(weights.rows(), weights.cols());
    const auto& node = nodes_[static_cast<std::size_t>(it->second)];
    if (node.grad.size() == 0) return Mat::Zero(weights.rows(), weights.cols());
    return node.grad;
  }

  const Mat& gradient(Var<Scalar> v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  bool uses(const Mat& weights) const { return param_ids_.count(&weights) > 0; }
  const std::vector<const Mat*>& parameters() const { return param_order_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward)});
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Mat*, int> param_ids_;
  std::vector<const Mat*> param_order_;
};

}  // namespace mambafoley
