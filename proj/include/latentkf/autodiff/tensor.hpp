// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and named parameter sets.
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace latentkf::ad {

using Shape = std::vector<std::size_t>;

/// Storage with a fixed base alignment. Vectorized reductions then split work identically on every
/// allocation, which keeps training bitwise reproducible.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);
/// Throws ShapeError naming both shapes.
[[noreturn]] void throw_shape_mismatch(const std::string& what, const Shape& a, const Shape& b);

template <class T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), T(0)) {}
  Tensor(Shape s, const std::vector<T>& values);
  Tensor(Shape s, Buffer<T> values);
  static Tensor filled(Shape s, T value);
  static Tensor scalar(T value) { return filled(Shape{1}, value); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

/// A named array with a gradient accumulator of identical shape.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  /// Non-trainable entries (normalization constants, running statistics) never receive gradients.
  bool trainable = true;
};

/// Ordered, uniquely named collection of parameters with stable addresses.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Shape shape, bool trainable = true);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& at(std::size_t i) { return *params_.at(i); }
  const Parameter<T>& at(std::size_t i) const { return *params_.at(i); }

  /// Scalar count of trainable entries.
  std::size_t parameter_count() const;
  /// Scalar count including non-trainable entries.
  std::size_t total_count() const;
  double l2_norm() const;
  double grad_norm() const;
  /// Rescales gradients so their global norm is at most max_norm; returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void zero_grad();

  /// A frozen set contributes constants to tapes: no gradients, no running-stat updates.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p->name, p->value.shape, p->trainable);
      q.value = p->value.template cast<U>();
    }
    out.set_frozen(frozen_);
    return out;
  }
  /// Copies values from a set with the same names and shapes.
  template <class U>
  void assign_from(const ParamSet<U>& other);

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
  bool frozen_ = false;
};

template <class T>
template <class U>
void ParamSet<T>::assign_from(const ParamSet<U>& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    const auto& src = other.at(i);
    auto& dst = get(src.name);
    if (dst.value.shape != src.value.shape) throw_shape_mismatch(src.name, dst.value.shape, src.value.shape);
    for (std::size_t k = 0; k < src.value.size(); ++k) dst.value.data[k] = static_cast<T>(src.value.data[k]);
  }
}


extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace latentkf::ad
