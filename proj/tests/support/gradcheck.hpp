// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checks for tape computations in double precision.
#pragma once

#include "latentkf/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace latentkf::testing {

using TensorD = ad::Tensor<double>;
using VarD = ad::Var<double>;

/// Worst relative error over all checked inputs, with the name of the worst one.
struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both are below `floor`.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale < floor ? 0.0 : std::sqrt(diff) / scale;
}

inline TensorD random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

/// A scalar-valued tape program over differentiable inputs.
using ProgramD = std::function<VarD(ad::Tape<double>&, const std::vector<VarD>&)>;

inline double evaluate(const ProgramD& f, const std::vector<TensorD>& inputs) {
  ad::Tape<double> tape(false);
  std::vector<VarD> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return f(tape, vars).value()[0];
}

/// Checks d f / d inputs against central differences with step h.
inline GradcheckResult gradcheck(const ProgramD& f, std::vector<TensorD> inputs, double h = 1e-6) {
  ad::Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  VarD out = f(tape, vars);
  tape.backward(out);
  GradcheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const TensorD analytic = tape.grad(vars[k]);
    std::vector<double> a(analytic.data.begin(), analytic.data.end()), n(a.size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data[i];
      inputs[k].data[i] = saved + h;
      const double up = evaluate(f, inputs);
      inputs[k].data[i] = saved - h;
      const double down = evaluate(f, inputs);
      inputs[k].data[i] = saved;
      n[i] = (up - down) / (2.0 * h);
    }
    const double e = relative_error(a, n);
    ++res.checked;
    if (e >= res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = "input " + std::to_string(k);
    }
  }
  return res;
}

/// A scalar program over a parameter set (gradients arrive through Tape::param).
using ParamProgramD = std::function<VarD(ad::Tape<double>&, ad::ParamSet<double>&)>;

/// Checks parameter gradients. At most `per_param` entries of each trainable parameter are probed (all when 0).
inline GradcheckResult gradcheck_params(const ParamProgramD& f, ad::ParamSet<double>& params, std::size_t per_param = 0,
                                        std::uint64_t seed = 7, double h = 1e-6) {
  params.zero_grad();
  {
    ad::Tape<double> tape;
    VarD out = f(tape, params);
    tape.backward(out);
  }
  auto value = [&] {
    ad::Tape<double> tape(false);
    return f(tape, params).value()[0];
  };
  std::mt19937_64 rng(seed);
  GradcheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& prm = params.at(p);
    if (!prm.trainable) continue;
    std::vector<std::size_t> idx(prm.value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_param != 0 && idx.size() > per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_param);
    }
    std::vector<double> a, n;
    for (std::size_t i : idx) {
      const double saved = prm.value.data[i];
      prm.value.data[i] = saved + h;
      const double up = value();
      prm.value.data[i] = saved - h;
      const double down = value();
      prm.value.data[i] = saved;
      a.push_back(prm.grad.data[i]);
      n.push_back((up - down) / (2.0 * h));
    }
    const double e = relative_error(a, n);
    ++res.checked;
    if (e >= res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = prm.name;
    }
  }
  return res;
}

}  // namespace latentkf::testing
