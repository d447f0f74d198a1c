// Copyright 2026 The xmadapter Authors.
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

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "xmadapter/tensor.hpp"

namespace xma {

/// A value in a dynamically recorded computation.
///
/// Interior nodes keep their inputs alive and a closure that maps the node's
/// gradient onto its inputs. Closures are only recorded when at least one input
/// requires a gradient, so inference-only passes build no backward graph.
struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return inputs.empty() && !backward_fn; }
  // Zero-initialized gradient buffer shaped like value.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

/// Handle to a Node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Records an interior node. Throws NonFiniteError naming `op` if value has a NaN/Inf.
/// `backward` is dropped when no input requires a gradient.
// While alive, ops on this thread record no graph, even for inputs that require grad.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

Var make_node(Tensor value, const char* op, std::vector<Var> inputs,
              std::function<void(Node&)> backward);

/// Reverse sweep from a single-element root. Leaf gradients accumulate; the
/// interior graph reachable from root is released afterwards.
void backward(const Var& root);

}  // namespace xma
