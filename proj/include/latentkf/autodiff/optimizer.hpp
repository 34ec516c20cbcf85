// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latentkf/autodiff/tensor.hpp"

#include <string>
#include <vector>

namespace latentkf::ad {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 1e-2;
  /// lambda in theta <- theta - mu (g + 2 lambda theta).
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Throws InvalidArgument on non-positive rate, negative decay or zero batch/epochs.
  void validate() const;
};

/// One plain SGD update of every trainable parameter, then grads cleared. Throws DivergenceError
/// (leaving parameters untouched) when any gradient entry is non-finite.
template <class T>
void sgd_step(ParamSet<T>& params, double learning_rate, double weight_decay);

/// Stateful wrapper dispatching on OptimizerConfig::kind.
template <class T>
class Optimizer {
 public:
  Optimizer(ParamSet<T>& params, OptimizerConfig cfg);
  void step();
  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  ParamSet<T>* params_;
  OptimizerConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace latentkf::ad
