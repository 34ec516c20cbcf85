// SPDX-License-Identifier: Apache-2.0
//
// Small closed-loop systems for checking gradients through the unrolled pipeline.
#pragma once

#include "latentkf/pipeline.hpp"
#include "support/gradcheck.hpp"

#include <algorithm>
#include <memory>
#include <numbers>

namespace latentkf::testing {

inline encoders::EncoderArch tiny_encoder(std::size_t m, std::size_t p, bool periodic) {
  encoders::EncoderArch a;
  a.height = 6;
  a.width = 7;
  a.m = m;
  a.p = p;
  a.channels = {2, 2};
  a.hidden = 5;
  a.prior_width = 3;
  a.with_prior = true;
  if (periodic) a.periods = {2.0 * std::numbers::pi, 0.0};
  return a;
}

/// Random rollout inputs of length `len` following a noisy version of the model, so the dynamics' Jacobian
/// is exercised near realistic states.
struct RolloutData {
  TensorD frames, states, x0;
};

inline RolloutData rollout_data(const models::Dynamics& f, std::size_t b, std::size_t len, std::size_t n,
                                std::mt19937_64& rng, double spread) {
  const std::size_t m = f.state_dim();
  RolloutData d{random_tensor({b, len, n}, rng), TensorD({b, len, m}), TensorD({b, m})};
  std::normal_distribution<double> noise(0.0, 0.1);
  for (std::size_t k = 0; k < b; ++k) {
    models::StateVector x = models::StateVector::Random(static_cast<Eigen::Index>(m)) * spread;
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < m; ++i) d.states.data[(k * len + t) * m + i] = x(static_cast<Eigen::Index>(i));
      x = f.evolve(x);
      for (std::size_t i = 0; i < m; ++i) x(static_cast<Eigen::Index>(i)) += noise(rng);
    }
    for (std::size_t i = 0; i < m; ++i) d.x0.data[k * m + i] = d.states.data[k * len * m + i] + noise(rng);
  }
  return d;
}

struct TinySystem {
  std::shared_ptr<const models::Dynamics> f;
  models::SelectionMatrix sel;
  encoders::EncoderArch enc_arch;
  gain::GainNetArch gain_arch;
  ad::ParamSet<double> enc, gain;
  RolloutData data;
};

inline TinySystem tiny_system(bool pendulum, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TinySystem s{pendulum ? std::shared_ptr<const models::Dynamics>(std::make_shared<models::PendulumDynamics>())
                        : std::make_shared<models::LorenzDynamics>(),
               pendulum ? models::SelectionMatrix({0}, 2) : models::SelectionMatrix::identity(3),
               {}, {}, {}, {}, {}};
  const std::size_t m = s.f->state_dim(), p = s.sel.rows();
  s.enc_arch = tiny_encoder(m, p, pendulum);
  s.gain_arch = gain::GainNetArch::for_dims(m, p);
  s.enc = encoders::make_encoder_params<double>(s.enc_arch, seed + 1);
  s.gain = gain::make_gain_params<double>(s.gain_arch, seed + 2, 0.5 * s.sel.dense().transpose());
  for (auto& v : s.gain.get("head2.w").value.data) v *= 20.0;
  s.data = rollout_data(*s.f, 2, len, s.enc_arch.height * s.enc_arch.width, rng, pendulum ? 1.0 : 5.0);
  return s;
}

inline VarD loss_of(ad::Tape<double>& t, TinySystem& s, bool bn_training) {
  return pipeline::rollout_loss(t, *s.f, s.sel, s.enc_arch, s.enc, s.gain_arch, s.gain, s.data.frames, s.data.states,
                                s.data.x0, bn_training);
}

/// Worst gradcheck over the encoder and gain-network parameters of a rollout with `len - 1` filtered steps,
/// each set checked with the other frozen.
inline GradcheckResult rollout_gradcheck(bool pendulum, bool bn_training, std::size_t len = 6,
                                         std::size_t per_param = 8) {
  auto s = tiny_system(pendulum, len, pendulum ? 11 : 12);
  auto prog = [&](ad::Tape<double>& t, ad::ParamSet<double>&) { return loss_of(t, s, bn_training); };
  s.gain.set_frozen(true);
  const auto re = gradcheck_params(prog, s.enc, per_param);
  s.gain.set_frozen(false);
  s.enc.set_frozen(true);
  const auto rg = gradcheck_params(prog, s.gain, per_param);
  s.enc.set_frozen(false);
  GradcheckResult worst = re.max_rel_error >= rg.max_rel_error ? re : rg;
  worst.checked = re.checked + rg.checked;
  return worst;
}

}  // namespace latentkf::testing
