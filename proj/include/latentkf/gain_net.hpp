// SPDX-License-Identifier: Apache-2.0
//
// Recurrent Kalman-gain network. Per step it sees four differences, each
// normalized to unit length with its norm appended:
//
//   F1 = z_t - z_{t-1}              F2 = z_t - zhat_{t|t-1}
//   F3 = xhat_{t-1} - xhat_{t-1|t-2}   F4 = xhat_{t|t-1} - xhat_{t-1}
//
// and mirrors the moment recursion of the filter it replaces:
//
//   GRU_Q(F4) -> GRU_Sigma(h_Q ++ F3) -> relu(FC) -> GRU_S(. ++ F1 ++ F2)
//   K = reshape(FC(relu(FC(h_Sigma ++ h_S))), m x p)
#pragma once

#include "latentkf/autodiff/tape.hpp"

#include <Eigen/Dense>

#include <vector>

namespace latentkf::gain {

struct GainNetArch {
  std::size_t m = 3;
  std::size_t p = 3;
  std::size_t hidden_q = 9;
  std::size_t hidden_sigma = 9;
  std::size_t hidden_s = 9;
  std::size_t expand = 9;
  std::size_t head_hidden = 36;

  /// Widths h_Q = h_Sigma = max(m^2, 8), h_S = max(p^2, 8), expand = max(p^2, 4), head = 2 (h_Sigma + h_S).
  static GainNetArch for_dims(std::size_t m, std::size_t p);
  void validate() const;
  std::size_t state_feature_width() const { return m + 1; }
  std::size_t obs_feature_width() const { return p + 1; }
};

/// Registers all parameters; the output layer starts small with its bias at `initial_gain` (m x p,
/// row-major) so early rollouts are near a fixed-gain filter.
template <class T>
ad::ParamSet<T> make_gain_params(const GainNetArch& arch, std::uint64_t seed, const Eigen::MatrixXd& initial_gain);

/// Recurrent context of a batch of rollouts on a tape.
template <class T>
struct GainTapeState {
  ad::Var<T> h_q, h_sigma, h_s;  // (B, hidden)
  ad::Var<T> prev_z;             // (B, p)
  ad::Var<T> prev_prior;         // (B, m), xhat_{t-1|t-2}
};

/// Zero hidden states; previous feature caches seeded from the initial estimate x0 (B,m):
/// prev_z = P x0 and prev_prior = x0.
template <class T>
GainTapeState<T> gain_reset(ad::Tape<T>& tape, const GainNetArch& arch, ad::Var<T> x0,
                            const std::vector<std::size_t>& selection);

/// One step: returns K (B,m,p) and advances `state`.
template <class T>
ad::Var<T> gain_step(ad::Tape<T>& tape, const GainNetArch& arch, ad::ParamSet<T>& params, GainTapeState<T>& state,
                     ad::Var<T> z, ad::Var<T> z_pred, ad::Var<T> x_prior, ad::Var<T> x_prev);

/// Tape-free single-rollout evaluator over a snapshot of the weights.
class GainNetInference {
 public:
  GainNetInference(const GainNetArch& arch, const ad::ParamSet<float>& params);
  GainNetInference(const GainNetInference&) = delete;
  GainNetInference& operator=(const GainNetInference&) = delete;
  GainNetInference(GainNetInference&&) = default;

  void reset(const double* x0, const std::vector<std::size_t>& selection);
  /// Writes K (m x p, row-major) and advances the recurrent state.
  void step(const double* z, const double* z_pred, const double* x_prior, const double* x_prev, double* k_out);

  const std::vector<float>& hidden_q() const { return h_q_; }
  const std::vector<float>& hidden_sigma() const { return h_sigma_; }
  const std::vector<float>& hidden_s() const { return h_s_; }
  /// Euclidean norm of the concatenated hidden states.
  double hidden_norm() const;

 private:
  struct Gru {
    const float* w[3];
    const float* u[3];
    const float* b[3];
    std::size_t in, hidden;
  };
  void run_gru(const Gru& g, const float* x, std::vector<float>& h);

  GainNetArch arch_;
  ad::ParamSet<float> params_;
  Gru gru_q_, gru_sigma_, gru_s_;
  const float *expand_w_, *expand_b_, *head1_w_, *head1_b_, *head2_w_, *head2_b_;
  std::vector<float> h_q_, h_sigma_, h_s_, prev_z_, prev_prior_;
  std::vector<float> f1_, f2_, f3_, f4_, in_sigma_, in_s_, expand_, head_in_, head_hidden_, k_, h_tmp_, scratch_;
};

}  // namespace latentkf::gain
