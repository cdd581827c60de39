#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "newscap/core/params.hpp"
#include "newscap/core/tensor.hpp"

namespace newscap {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// parents always precede children and backward() is a single reverse sweep.
/// A tape belongs to one thread and one forward pass.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Tensor<Scalar>& grad, const Tensor<Scalar>& value)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor<Scalar>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Var<Scalar> constant(Tensor<Scalar> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Leaf for a trainable parameter. Repeated calls reuse the same node.
  Var<Scalar> param(const ParamStore<Scalar>& store, ParamId pid) {
    if (auto it = param_nodes_.find(pid.index); it != param_nodes_.end()) {
      return Var<Scalar>{this, it->second};
    }
    Node n;
    n.external = &store.value(pid);
    n.requires_grad = recording_;
    n.param_index = pid.index;
    Var<Scalar> v = push(std::move(n));
    param_nodes_.emplace(pid.index, v.id);
    return v;
  }

  /// Appends an op result. `fn` receives the output gradient and must
  /// accumulate into parents via grad(); it is dropped when no parent
  /// requires a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                     BackwardFn fn) {
    return record(std::move(value), std::vector<Var<Scalar>>(parents), std::move(fn));
  }

  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& parents,
                     BackwardFn fn) {
#ifndef NDEBUG
    assert(value.all_finite() && "non-finite value produced by tensor op");
#endif
    Node n;
    n.owned = std::move(value);
    if (recording_) {
      for (const auto& p : parents) {
        if (p.tape != this) throw std::logic_error("var from a different tape");
        n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
      }
      if (n.requires_grad) n.backward = std::move(fn);
    }
    return push(std::move(n));
  }

  /// Drops every node recorded after the first `size` ones. Vars above the
  /// mark become dangling; used to reuse one inference tape across decode steps.
  void rewind(std::size_t size) {
    if (size > nodes_.size()) throw std::out_of_range("rewind past the end of the tape");
    nodes_.resize(size);
    std::erase_if(param_nodes_, [size](const auto& kv) { return kv.second >= size; });
  }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<Scalar>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad) n.grad.emplace(value(id).shape());
    return *n.grad;
  }

  /// Propagates d(loss)/d(node) back to every parameter leaf and adds the
  /// result into `out` (indexed like the ParamStore). Parameters that the loss
  /// does not reach receive nothing, i.e. keep their zero entries.
  void backward(Var<Scalar> loss, Gradients<Scalar>& out) {
    if (loss.tape != this) throw std::logic_error("loss from a different tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got " +
                       shape_string(value(loss.id).shape()));
    }
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    grad(loss.id).fill(Scalar{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.requires_grad) continue;
      if (n.backward) {
        n.backward(*this, *n.grad, value(i));
      } else if (n.param_index) {
        auto& dst = out.at(*n.param_index);
        auto g = n.grad->data();
        auto d = dst.data();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j];
      }
    }
  }

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* external = nullptr;
    std::optional<Tensor<Scalar>> grad;
    BackwardFn backward;
    std::optional<std::size_t> param_index;
    bool requires_grad = false;
  };

  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  bool recording_;
  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

}  // namespace newscap
