// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/optimizer.hpp"

#include "latentkf/error.hpp"

#include <cmath>

namespace latentkf::ad {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be non-negative");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (epochs == 0) throw InvalidArgument("epoch count must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must lie in [0,1)");
}

namespace {

template <class T>
void require_finite_grads(const ParamSet<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    if (!p.trainable) continue;
    for (T g : p.grad.data) {
      if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
}

}  // namespace

template <class T>
void sgd_step(ParamSet<T>& params, double learning_rate, double weight_decay) {
  require_finite_grads(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double theta = p.value.data[k];
      p.value.data[k] = static_cast<T>(theta - learning_rate * (p.grad.data[k] + 2.0 * weight_decay * theta));
    }
  }
  params.zero_grad();
}

template <class T>
Optimizer<T>::Optimizer(ParamSet<T>& params, OptimizerConfig cfg) : params_(&params), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.kind == OptimizerKind::kAdam) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.at(i).value.size(), 0.0);
      v_.emplace_back(params.at(i).value.size(), 0.0);
    }
  }
}

template <class T>
void Optimizer<T>::step() {
  ++steps_;
  if (cfg_.kind == OptimizerKind::kSgd) {
    sgd_step(*params_, cfg_.learning_rate, cfg_.weight_decay);
    return;
  }
  require_finite_grads(*params_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto& p = params_->at(i);
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double theta = p.value.data[k];
      const double g = p.grad.data[k] + 2.0 * cfg_.weight_decay * theta;
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m_[i][k] / c1, vh = v_[i][k] / c2;
      p.value.data[k] = static_cast<T>(theta - cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon));
    }
  }
  params_->zero_grad();
}

template void sgd_step<float>(ParamSet<float>&, double, double);
template void sgd_step<double>(ParamSet<double>&, double, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace latentkf::ad
