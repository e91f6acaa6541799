// Copyright (c) 2026 The Sonospeck Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over a recorded tape.
//
// A Var is a shared handle to a Node holding a value and, once backward has
// touched it, a gradient of identical shape. Leaves are created directly
// (parameters, inputs); every other Var is produced by an op in ops.hpp
// which records a backward rule on the Tape passed to it. Nodes whose inputs
// do not require gradients are never recorded, so inference on a recording
// tape costs nothing beyond the forward arithmetic.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sonospeck/tensor.hpp"

namespace sonospeck {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string label;

  bool has_grad() const { return !grad.empty(); }

  /// Returns the gradient buffer, zero-initialising it on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    auto& dst = grad_buffer();
    const T* src = g.raw();
    T* out = dst.raw();
    for (std::size_t i = 0; i < dst.size(); ++i) out[i] += src[i];
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Trainable leaf.
  static Var leaf(Tensor<T> value, std::string label = {}) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->label = std::move(label);
    return Var(std::move(node));
  }

  /// Leaf excluded from differentiation (inputs, detached targets).
  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // Handles share their node, so these are shallow-const.
  Tensor<T>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() const { return node_->grad_buffer(); }
  void zero_grad() const { node_->grad = Tensor<T>(); }
  const std::string& label() const { return node_->label; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// backward() walks the record in reverse; every op's inputs were recorded
/// before the op itself, so reverse recording order is a valid reverse
/// topological order. A tape is consumed by backward(); reset() readies it
/// for the next step.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  /// A non-recording tape evaluates ops without keeping backward rules
  /// (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Wraps value as the output of an op. The backward rule is kept only if
  /// some input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    if (consumed_) {
      throw ValidationError("tape already consumed by backward(); reset() it");
    }
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (recording_) {
      for (const auto& in : inputs) {
        if (in.defined() && in.requires_grad()) node->requires_grad = true;
      }
    }
    if (node->requires_grad) {
      entries_.push_back(Entry{node, std::move(backward)});
    }
    return Var<T>(std::move(node));
  }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  bool recording() const { return recording_; }

  void backward(const Var<T>& loss) {
    if (consumed_) {
      throw ValidationError(
          "backward() called twice on the same tape without re-recording");
    }
    if (!loss.defined() || !loss.shape().is_scalar()) {
      throw ValidationError("backward() needs a scalar loss, got " +
                            (loss.defined() ? loss.shape().str() : "null"));
    }
    if (!loss.requires_grad()) {
      throw ValidationError("loss does not depend on any trainable leaf");
    }
    loss.node()->grad_buffer().fill(T(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->node->has_grad()) it->backward(it->node->grad);
      // Interior gradients are not needed once propagated.
      it->node->grad = Tensor<T>();
      it->backward = nullptr;
    }
    consumed_ = true;
    entries_.clear();
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::shared_ptr<Node<T>> node;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace sonospeck
