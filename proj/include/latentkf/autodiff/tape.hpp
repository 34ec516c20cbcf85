// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for backward.
#pragma once

#include "latentkf/autodiff/tensor.hpp"

#include <deque>
#include <functional>
#include <unordered_map>

namespace latentkf::ad {

template <class T>
class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape is alive and not reset.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape; }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <class T>
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  /// With grad disabled no backward closures are stored and nothing requires grad.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Constant or input leaf.
  Var<T> constant(Tensor<T> value);
  /// Differentiable input leaf whose gradient can be read back with grad().
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; repeated calls return the same node. Gradients reach
  /// Parameter::grad in backward() unless the parameter is non-trainable or its set is frozen.
  Var<T> param(Parameter<T>& p, bool frozen = false);
  Var<T> param(ParamSet<T>& set, const std::string& name) { return param(set.get(name), set.frozen()); }

  /// Appends an op output. `inputs` decide whether the node requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Gradient buffer of a node requiring grad (allocated zeroed on first use), else nullptr.
  T* grad_buffer(std::size_t id);
  /// Gradient after backward(); zeros if the node received none.
  Tensor<T> grad(Var<T> v) const;

  /// Runs reverse accumulation from a scalar. A second call without reset() throws DoubleBackwardError.
  void backward(Var<T> loss);
  bool backward_done() const { return backward_done_; }
  /// Drops all nodes; outstanding Vars become invalid.
  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;  // stable references across push
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace latentkf::ad
