#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wvsc/nn/params.hpp"
#include "wvsc/nn/tensor.hpp"

namespace wvsc::nn {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

/// Reverse-mode tape. Nodes are appended in topological order; backward walks
/// them in reverse. Gradients are allocated lazily, so nodes that no gradient
/// reaches stay empty.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient; adds into input gradients via accumulate().
  using Backprop = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}); }

  /// A leaf that collects gradient; used for gradient checks.
  Var<T> input(Tensor<T> v) { return push(std::move(v), true, {}); }

  Var<T> param(Parameter<T>& p) {
    Var<T> v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  Var<T> push(Tensor<T> value, bool requires_grad, Backprop fn) {
#ifndef NDEBUG
    if (!value.all_finite()) throw std::runtime_error("non-finite value produced on tape");
#endif
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v; zeros if none reached it.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) throw std::logic_error("gradient shape mismatch on tape");
    if (n.grad.empty()) {
      n.grad = Tensor<T>(n.value.shape());
    }
    T* dst = n.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient buffer for in-place accumulation by op backprops.
  T* grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad.data();
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates; parameter gradients are added
  /// into Parameter::grad and flagged.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
    if (value(loss).size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor<T>(value(loss).shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.param != nullptr) {
        Parameter<T>& p = *n.param;
        for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += n.grad[j];
        p.has_grad = true;
      }
      if (n.backprop) {
        n.backprop(*this, n.grad);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    Backprop backprop;
  };

  const Node& node(Var<T> v) const {
    if (v.tape != this) throw std::invalid_argument("variable belongs to another tape");
    return nodes_.at(v.id);
  }

  std::vector<Node> nodes_;
};

}  // namespace wvsc::nn
