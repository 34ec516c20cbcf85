// SPDX-License-Identifier: Apache-2.0
//
// Encoder + recurrent gain + model-based prediction:
//
//   xhat_{t|t-1} = f(xhat_{t-1}),  zhat = P xhat_{t|t-1},  z = g_e(y_t, xhat_{t|t-1})
//   K_t = g_f(...),                xhat_t = xhat_{t|t-1} + K_t (z - zhat)
//
// Training: a warm start of the prior-fed encoder on noisy ground-truth
// priors, then alternating epochs over closed-loop rollouts (gain pass with
// the encoder frozen, then encoder pass with the gain frozen, same batches).
#pragma once

#include "latentkf/autodiff/ops.hpp"
#include "latentkf/encoder.hpp"
#include "latentkf/gain_net.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>

namespace latentkf::pipeline {

using models::StateVector;

struct TrainSchedule {
  /// Encoder warm start on noisy ground-truth priors.
  ad::OptimizerConfig warm_start{ad::OptimizerKind::kSgd, 0.05, 1e-5, 32, 10};
  /// Zero selects 3 sqrt(q2) of the model.
  double prior_sigma = 0.0;
  /// Alternating epochs i_max.
  std::size_t epochs = 10;
  /// Trajectories per batch.
  std::size_t batch_size = 8;
  ad::OptimizerKind optimizer = ad::OptimizerKind::kSgd;
  double gain_learning_rate = 1e-3;     // mu_1
  double encoder_learning_rate = 1e-3;  // mu_2
  double gain_weight_decay = 1e-6;      // lambda_1
  double encoder_weight_decay = 1e-6;   // lambda_2
  double clip_norm = 10.0;
  /// Steps between gradient truncation points; 0 unrolls the whole trajectory.
  std::size_t bptt_window = 0;
  /// Scalar placed on the observed rows of the initial gain bias.
  double initial_gain = 0.5;
  bool update_encoder = true;
  /// State entries scored by the validation MSE that selects the kept epoch; empty scores all.
  std::vector<std::size_t> metric_components;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double gain_pass_loss = 0.0;
  double encoder_pass_loss = 0.0;
  double validation_mse = 0.0;
  double max_grad_norm = 0.0;
  std::size_t clipped_batches = 0;
};

struct TrainingLog {
  double warm_start_validation_mse = 0.0;
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;  // 0 = parameters before alternating
  bool diverged = false;
  std::string divergence_reason;

  nlohmann::json to_json() const;
};

/// The trained system: filter-side model knowledge plus both learned parts.
class LatentKalmanNet {
 public:
  LatentKalmanNet() = default;
  LatentKalmanNet(std::shared_ptr<const models::Dynamics> dynamics, models::SelectionMatrix selection,
                  encoders::Encoder encoder, gain::GainNetArch gain_arch, ad::ParamSet<float> gain_params);

  const models::Dynamics& dynamics() const { return *dynamics_; }
  std::shared_ptr<const models::Dynamics> dynamics_ptr() const { return dynamics_; }
  const models::SelectionMatrix& selection() const { return selection_; }
  encoders::Encoder& encoder() { return encoder_; }
  const encoders::Encoder& encoder() const { return encoder_; }
  const gain::GainNetArch& gain_arch() const { return gain_arch_; }
  ad::ParamSet<float>& gain_params() { return gain_params_; }
  const ad::ParamSet<float>& gain_params() const { return gain_params_; }
  void set_dynamics(std::shared_ptr<const models::Dynamics> dynamics);

 private:
  std::shared_ptr<const models::Dynamics> dynamics_;
  models::SelectionMatrix selection_ = models::SelectionMatrix::identity(1);
  encoders::Encoder encoder_;
  gain::GainNetArch gain_arch_;
  ad::ParamSet<float> gain_params_;
};

/// Per-trajectory inference state (previous estimate + gain recurrence) over a snapshot of the weights.
class InferenceSession {
 public:
  explicit InferenceSession(const LatentKalmanNet& net);
  void reset(const StateVector& x0);
  /// One filtering step on frame y_t; returns xhat_t.
  const StateVector& step(std::span<const float> frame);
  /// Runs frames 1..count-1 of a trajectory; element 0 is x0.
  std::vector<StateVector> run(const data::Dataset& dataset, std::size_t trajectory, const StateVector& x0);

  const StateVector& estimate() const { return x_; }
  const Eigen::MatrixXd& last_gain() const { return k_; }
  const Eigen::VectorXd& last_feature() const { return z_; }
  double hidden_norm() const { return gain_.hidden_norm(); }

 private:
  std::shared_ptr<const models::Dynamics> dynamics_;
  std::vector<std::size_t> indices_;
  std::vector<double> z_periods_;
  bool with_prior_ = true;
  encoders::EncoderInference encoder_;
  gain::GainNetInference gain_;
  StateVector x_, prior_;
  Eigen::VectorXd z_, z_pred_;
  Eigen::MatrixXd k_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> k_rm_;
};

/// Row function evaluating f and its Jacobian, for tape rollouts.
ad::RowFunction evolve_function(std::shared_ptr<const models::Dynamics> dynamics);

/// Mean over batch and steps 1..T-1 of |xhat_t - x_t|^2 along closed-loop rollouts.
/// frames: (B,T,n); states: (B,T,m); x0: (B,m). Periodic features are taken on the branch nearest the
/// prediction and periodic errors are measured modulo the period. Estimates are appended to `estimates`
/// when non-null.
template <class T>
ad::Var<T> rollout_loss(ad::Tape<T>& tape, const models::Dynamics& dynamics, const models::SelectionMatrix& selection,
                        const encoders::EncoderArch& enc_arch, ad::ParamSet<T>& enc_params,
                        const gain::GainNetArch& gain_arch, ad::ParamSet<T>& gain_params,
                        const ad::Tensor<T>& frames, const ad::Tensor<T>& states, const ad::Tensor<T>& x0,
                        bool bn_training, std::size_t bptt_window = 0,
                        std::vector<ad::Var<T>>* estimates = nullptr);

/// Prior-fed encoder trained on noisy ground-truth priors; sigma defaults to 3 sqrt(q2). Starts from the
/// prior-free encoder `init` when given.
encoders::EncoderTrainResult warm_start(const models::SSModelSpec& spec, const data::Dataset& dataset,
                                        const data::SplitIndices& splits, const TrainSchedule& schedule,
                                        const encoders::Encoder* init = nullptr);

/// Builds an untrained pipeline around a warm-started encoder.
LatentKalmanNet assemble(std::shared_ptr<const models::Dynamics> dynamics, const models::SelectionMatrix& selection,
                         const encoders::Encoder& encoder, const TrainSchedule& schedule);

/// Alternating minimization in place. Keeps the parameters of the epoch with the lowest validation MSE.
TrainingLog train_alternating(LatentKalmanNet& net, const data::Dataset& dataset, const data::SplitIndices& splits,
                              const TrainSchedule& schedule,
                              const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean |xhat - x|^2 (periodic entries modulo their period) over steps 1..T-1 of the listed trajectories,
/// with initial estimates drawn from `seed`.
/// `components` restricts the error to the listed state entries (empty = all).
double evaluate_mse(const LatentKalmanNet& net, const data::Dataset& dataset, std::span<const std::size_t> trajectories,
                    std::uint64_t seed, std::span<const std::size_t> components = {});

/// Combined checkpoint: <dir>/encoder, <dir>/gain (parameter checkpoints) and <dir>/schedule.json.
void save_pipeline(const LatentKalmanNet& net, const TrainSchedule& schedule, const nlohmann::json& extra,
                   const std::filesystem::path& dir);
/// Restores a pipeline; the dynamics must be supplied by the caller. Returns schedule.json's content.
LatentKalmanNet load_pipeline(const std::filesystem::path& dir, std::shared_ptr<const models::Dynamics> dynamics,
                              nlohmann::json* schedule_record = nullptr);

void save_encoder(const encoders::Encoder& encoder, const std::filesystem::path& dir,
                  const nlohmann::json& extra = nlohmann::json::object());
encoders::Encoder load_encoder(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

nlohmann::json encoder_arch_to_json(const encoders::EncoderArch& arch);
encoders::EncoderArch encoder_arch_from_json(const nlohmann::json& j);
nlohmann::json gain_arch_to_json(const gain::GainNetArch& arch);
gain::GainNetArch gain_arch_from_json(const nlohmann::json& j);

}  // namespace latentkf::pipeline
