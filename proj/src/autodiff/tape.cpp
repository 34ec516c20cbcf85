// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/tape.hpp"

#include "latentkf/error.hpp"

namespace latentkf::ad {

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p, bool frozen) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.trainable && !frozen;
  n.param = n.requires_grad ? &p : nullptr;
  Var<T> v = push(std::move(n));
  param_nodes_[&p] = v.id;
  return v;
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw InvalidArgument("op inputs belong to a different tape");
      if (nodes_.at(in.id).requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

template <class T>
T* Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape);
  return n.grad.ptr();
}

template <class T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == n.value.size()) return n.grad;
  return Tensor<T>(n.value.shape);
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (backward_done_) throw DoubleBackwardError("backward already ran on this tape; reset() before reuse");
  if (loss.tape != this) throw InvalidArgument("loss belongs to a different tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(nodes_.at(loss.id).value.shape));
  }
  backward_done_ = true;
  if (T* g = grad_buffer(loss.id)) g[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      auto& dst = n.param->grad.data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad.data[k];
    }
  }
}

template <class T>
void Tape<T>::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace latentkf::ad
