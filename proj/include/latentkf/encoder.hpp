// SPDX-License-Identifier: Apache-2.0
//
// Convolutional image encoders. Without a prior the encoder maps a frame to
// an estimate of the observable state P x; with a prior the predicted state
// passes through its own FC branch and joins the flattened conv features.
//
//   1xHxW -conv/relu/bn-> 8 -> 16 -> 32 channels (k3, s2, p1) -> flatten
//   [ ++ FC(m -> 32)(prior) ] -> FC 32 -> relu -> FC p
//
// Prior inputs and outputs pass through fixed affine maps fitted to the
// training labels (non-trainable parameters "norm.*").
#pragma once

#include "latentkf/autodiff/optimizer.hpp"
#include "latentkf/autodiff/tape.hpp"
#include "latentkf/data.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <vector>

namespace latentkf::encoders {

using LatentFeature = Eigen::VectorXd;

struct EncoderArch {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t m = 2;  // state dimension (prior width)
  std::size_t p = 1;  // output width
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t hidden = 32;
  std::size_t prior_width = 32;
  bool with_prior = false;
  /// Frames are multiplied by this before the first convolution.
  double input_scale = 1.0;
  /// Per-state periods (empty: none periodic). Periodic prior entries and labels are wrapped near 0.
  std::vector<double> periods;

  /// Output shapes per layer, starting with (1,H,W) and ending with (p).
  std::vector<ad::Shape> layer_shapes() const;
  std::size_t flatten_size() const;
  void validate() const;
  /// Period of state entry i, 0 when non-periodic.
  double period(std::size_t i) const { return periods.empty() ? 0.0 : periods[i]; }

  static EncoderArch for_model(const models::SSModelSpec& spec, bool with_prior);
};

/// Registers all parameters of `arch` with deterministic initialization.
template <class T>
ad::ParamSet<T> make_encoder_params(const EncoderArch& arch, std::uint64_t seed);

/// Differentiable forward pass. `frames` is (B, H*W) or (B,1,H,W); `prior` is (B,m) and required
/// exactly when arch.with_prior. BN uses batch statistics (and updates running ones) when
/// `bn_training`, running statistics otherwise.
template <class T>
ad::Var<T> encoder_forward(ad::Tape<T>& tape, const EncoderArch& arch, ad::ParamSet<T>& params,
                           ad::Var<T> frames, std::optional<ad::Var<T>> prior, bool bn_training);

/// Label statistics feeding the fixed normalization maps.
struct LabelStats {
  std::vector<double> state_mean, state_std;    // length m
  std::vector<double> output_mean, output_std;  // length p
};

/// Periodic entries (per `periods`, empty for none) are wrapped near 0 before accumulation.
LabelStats label_stats(const data::Dataset& dataset, std::span<const std::size_t> trajectories,
                       const models::SelectionMatrix& selection, const std::vector<double>& periods = {});
void apply_label_stats(ad::ParamSet<float>& params, const EncoderArch& arch, const LabelStats& stats);

class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderArch arch, std::uint64_t seed);
  Encoder(EncoderArch arch, ad::ParamSet<float> params);

  const EncoderArch& arch() const { return arch_; }
  ad::ParamSet<float>& params() { return params_; }
  const ad::ParamSet<float>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }

  /// Single-frame inference (BN in inference mode).
  LatentFeature encode(std::span<const float> frame) const;
  LatentFeature encode_with_prior(std::span<const float> frame, const Eigen::VectorXd& prior) const;

 private:
  EncoderArch arch_;
  ad::ParamSet<float> params_;
};

/// Allocation-free single-frame inference over a snapshot of an encoder's weights.
class EncoderInference {
 public:
  explicit EncoderInference(const Encoder& encoder);
  EncoderInference(const EncoderInference&) = delete;
  EncoderInference& operator=(const EncoderInference&) = delete;
  EncoderInference(EncoderInference&&) = default;
  /// `prior` must be non-null exactly when the encoder has a prior branch. Writes p outputs.
  void run(const float* frame, const double* prior, double* out);
  LatentFeature run(std::span<const float> frame, const Eigen::VectorXd* prior = nullptr);

 private:
  struct ConvLayer {
    std::size_t channels, height, width, out_channels;
    const float *w, *b, *mean, *var, *gamma, *beta;
  };
  EncoderArch arch_;
  ad::ParamSet<float> params_;  // owned snapshot; the raw pointers below index into it
  std::vector<ConvLayer> convs_;
  const float *prior_w_ = nullptr, *prior_b_ = nullptr, *fc1_w_, *fc1_b_, *fc2_w_, *fc2_b_;
  const float *prior_mean_, *prior_scale_, *out_mean_, *out_scale_;
  std::vector<float> buf_a_, buf_b_, cols_, head_in_, hidden_, prior_in_, out_;
};

enum class PriorMode { kNone, kNoisyGroundTruth };

struct EncoderTrainConfig {
  ad::OptimizerConfig optimizer{ad::OptimizerKind::kSgd, 0.05, 1e-5, 32, 12};
  PriorMode prior_mode = PriorMode::kNone;
  /// Standard deviation of the Gaussian perturbation of ground-truth priors.
  double prior_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Progress callback per epoch (epoch, mean training loss); may be empty.
  std::function<void(std::size_t, double)> on_epoch;
};

struct EncoderTrainResult {
  Encoder encoder;
  /// Empirical covariance of z - P x on the validation split.
  Eigen::MatrixXd residual_covariance;
  double validation_mse = 0.0;
  std::vector<double> epoch_losses;
};

/// Copies every parameter `source` shares with `target` by name and shape. fc1.w, whose input width grows
/// by the prior branch, takes the image-feature columns from `source` and zeros in the prior columns, so a
/// prior-fed target initially computes exactly what a prior-free source does.
void transfer_weights(Encoder& target, const Encoder& source);

/// Supervised training on all (trajectory, step) frames of `train`, validated on `validation`.
/// Starts from `init` (via transfer_weights) when given, else from a seeded initialization.
/// Throws DivergenceError naming the epoch on a non-finite loss.
EncoderTrainResult train_encoder(const data::Dataset& dataset, std::span<const std::size_t> train,
                                 std::span<const std::size_t> validation, const models::SelectionMatrix& selection,
                                 EncoderArch arch, const EncoderTrainConfig& cfg, const Encoder* init = nullptr);

/// Continues training an existing encoder in place; returns per-epoch losses in standardized label units.
std::vector<double> fit_encoder(Encoder& encoder, const data::Dataset& dataset, std::span<const std::size_t> train,
                                const models::SelectionMatrix& selection, const EncoderTrainConfig& cfg);

/// z - P x statistics over the listed trajectories under `cfg`'s prior mode: (mean squared error, covariance).
std::pair<double, Eigen::MatrixXd> encoder_residuals(const Encoder& encoder, const data::Dataset& dataset,
                                                     std::span<const std::size_t> trajectories,
                                                     const models::SelectionMatrix& selection,
                                                     const EncoderTrainConfig& cfg);

}  // namespace latentkf::encoders
