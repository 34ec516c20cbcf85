// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/tensor.hpp"

#include "latentkf/error.hpp"

#include <cmath>
#include <sstream>

namespace latentkf::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void throw_shape_mismatch(const std::string& what, const Shape& a, const Shape& b) {
  throw ShapeError(what + ": shapes " + shape_str(a) + " and " + shape_str(b) + " are incompatible");
}

template <class T>
Tensor<T>::Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("tensor data of length " + std::to_string(data.size()) + " does not fill shape " +
                     shape_str(shape));
  }
}

template <class T>
Tensor<T>::Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("tensor data of length " + std::to_string(data.size()) + " does not fill shape " +
                     shape_str(shape));
  }
}

template <class T>
Tensor<T> Tensor<T>::filled(Shape s, T value) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

template <class T>
ParamSet<T>& ParamSet<T>::operator=(const ParamSet& other) {
  if (this == &other) return *this;
  params_.clear();
  index_ = other.index_;
  frozen_ = other.frozen_;
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
  return *this;
}

template <class T>
Parameter<T>& ParamSet<T>::add(const std::string& name, Shape shape, bool trainable) {
  if (name.empty()) throw InvalidArgument("parameter name must be non-empty");
  if (index_.count(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = Tensor<T>(shape);
  p->grad = Tensor<T>(shape);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
Parameter<T>& ParamSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return *params_[it->second];
}

template <class T>
const Parameter<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return *params_[it->second];
}

template <class T>
std::size_t ParamSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

template <class T>
std::size_t ParamSet<T>::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
double ParamSet<T>::l2_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    if (!p->trainable) continue;
    for (T v : p->value.data) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

template <class T>
double ParamSet<T>::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (T v : p->grad.data) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

template <class T>
double ParamSet<T>::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& p : params_) {
      for (T& v : p->grad.data) v *= scale;
    }
  }
  return norm;
}

template <class T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
}

template struct Tensor<float>;
template struct Tensor<double>;
template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace latentkf::ad
