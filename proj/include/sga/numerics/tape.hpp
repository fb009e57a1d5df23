/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <deque>
#include <functional>

#include "sga/numerics/tensor.hpp"

namespace sga {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the append order is a
/// topological order and backward() walks it in reverse. Values that do not
/// depend on any trainable leaf carry no backward closure at all.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-trainable value owned by the tape.
  Var constant(Tensor t) { return push(std::move(t), nullptr, false, {}, nullptr); }
  /// Non-trainable view of an external tensor; the tensor must outlive the tape.
  Var constant_ref(const Tensor& t) { return push({}, &t, false, {}, nullptr); }
  /// Trainable leaf; read its gradient through Var::grad() after backward().
  Var leaf(Tensor t) { return push(std::move(t), nullptr, true, {}, nullptr); }
  /// Trainable view of a Parameter; backward() adds into p.grad.
  Var param(Parameter& p) { return push({}, &p.value, true, {}, &p); }

  /// Records an op result. The closure is dropped when no input needs a gradient.
  Var record(Tensor value, bool requires_grad, Backward fn) {
    return push(std::move(value), nullptr, requires_grad, requires_grad ? std::move(fn) : Backward{},
                nullptr);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient slot of node `id` (allocating it on first use).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    ensure_grad(n, id);
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  /// Mutable gradient buffer of a node, zero-initialised on first access.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    ensure_grad(n, id);
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(Var loss) {
    if (loss.value().size() != 1)
      throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto dst = n.param->grad.data();
        if (dst.size() != n.grad.size()) {
          n.param->zero_grad();
          dst = n.param->grad.data();
        }
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  void ensure_grad(Node& n, std::size_t id) {
    if (n.grad.empty() && value(id).size() > 0) n.grad = Tensor(value(id).shape());
    else if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
  }

  Var push(Tensor owned, const Tensor* ref, bool rg, Backward fn, Parameter* p) {
    nodes_.push_back(Node{std::move(owned), ref, {}, rg, std::move(fn), p});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace sga
