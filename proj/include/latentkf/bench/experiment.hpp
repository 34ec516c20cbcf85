// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: dataset generation, per-variant training with a
// content-addressed checkpoint cache, held-out evaluation, the model-mismatch
// studies and the latency comparison.
//
// Cache layout under the cache directory (LATENTKF_CACHE, else <out>/cache):
//   enc-<hash>/plain   encoder without prior
//   enc-<hash>/warm    prior-fed encoder (metadata carries R-hat)
//   lkn-<hash>/        combined pipeline checkpoint
// Encoder hashes cover data and encoder settings only, so studies that change
// just the filter-side model reuse the encoders.
#pragma once

#include "latentkf/bench/metrics.hpp"
#include "latentkf/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace latentkf::bench {

enum class Variant { kEncoder, kEncoderPrior, kEncoderPriorEkf, kLatentKalmanNet };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);
std::vector<Variant> all_variants();

struct ExperimentConfig {
  models::ModelKind model = models::ModelKind::kLorenz;
  std::vector<double> noise_levels{2.0};
  std::vector<Variant> variants = all_variants();
  std::size_t count = 200;     // D, training dataset
  std::size_t test_count = 0;  // 0 selects count / 10
  std::size_t t_train = 100;
  std::size_t t_test = 100;
  /// Taylor order generating Lorenz data and the one handed to filters and pipelines.
  int taylor_j_true = 5;
  int taylor_j_filter = 5;
  /// Data simulated at dt / decimation and sub-sampled; filters keep dt. 1 disables.
  std::size_t decimation = 1;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir = "out";
  /// Empty: $LATENTKF_CACHE, else <out_dir>/cache.
  std::filesystem::path cache_dir;
  ad::OptimizerConfig encoder_optimizer{ad::OptimizerKind::kSgd, 0.05, 1e-5, 32, 10};
  pipeline::TrainSchedule schedule;
  std::vector<double> q2_grid;  // empty selects the default grid
  /// Suffix appended to variant names in the table (e.g. "@J=2").
  std::string variant_suffix;
  /// Stem of the metrics file and plot.
  std::string name = "metrics";
  std::string plot_title = "MSE vs noise level";
  bool write_outputs = true;
  std::function<void(const std::string&)> log;

  /// Reduced-scale settings used by the acceptance runs.
  static ExperimentConfig desk(models::ModelKind model);
  /// D = 1000, T = 200, four noise levels.
  static ExperimentConfig full_scale(models::ModelKind model);

  void validate() const;
  /// Canonical description; its hash labels the metrics rows.
  nlohmann::json to_json() const;
};

/// 16 hex digits of the 64-bit FNV-1a hash of the compact JSON dump.
std::string config_hash(const nlohmann::json& canonical);
std::filesystem::path resolve_cache_dir(const ExperimentConfig& cfg);

/// Data-generating and filter-side models for one noise level.
models::SSModelSpec data_spec(const ExperimentConfig& cfg, double level);
models::SSModelSpec filter_spec(const ExperimentConfig& cfg, double level);
/// State entries scored by the metric: phi for the pendulum, the full state for Lorenz. Errors on periodic
/// entries are measured modulo the period.
std::vector<std::size_t> metric_components(models::ModelKind model);

/// Training dataset (80/10/10 splits) and a separate test set of `test_count` trajectories of length t_test.
data::Dataset make_training_data(const ExperimentConfig& cfg, double level, std::uint64_t seed);
data::Dataset make_test_data(const ExperimentConfig& cfg, double level, std::uint64_t seed, std::size_t count,
                             std::size_t length);

/// Everything trained for one (noise level, seed); members are absent when no requested variant needs them.
struct TrainedArtifacts {
  std::optional<encoders::Encoder> plain;
  std::optional<encoders::Encoder> warm;
  Eigen::MatrixXd r_hat;
  std::optional<pipeline::LatentKalmanNet> lkn;
  pipeline::TrainingLog log;
  std::vector<std::string> notes;
  /// Cache locations (populated whether or not the parts exist).
  std::filesystem::path encoder_dir;
  std::filesystem::path pipeline_dir;
};

/// Loads from the cache or trains. When `train_missing` is false, absent parts stay empty.
TrainedArtifacts prepare_artifacts(const ExperimentConfig& cfg, double level, std::uint64_t seed,
                                   const std::vector<Variant>& variants, bool train_missing = true);

/// Per-run diagnostics beyond the metrics row.
struct VariantDiagnostics {
  std::string variant;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  /// The metric's error with periodic entries compared as raw numbers instead of modulo their period.
  double unwrapped_mse = 0.0;
  /// Latent EKF only: the tuned process-noise variance.
  double q2 = 0.0;
  /// Latent-KalmanNet only: largest and final-step mean norm of the concatenated hidden state.
  double hidden_norm_max = 0.0;
  double hidden_norm_final_mean = 0.0;
  bool diverged = false;
};

struct ExperimentResult {
  std::vector<MetricRecord> records;
  std::vector<VariantDiagnostics> diagnostics;
  std::vector<std::string> notes;
  std::filesystem::path metrics_path;
  std::vector<std::filesystem::path> plots;

  /// Median mse_db over seeds of one variant (name as written in the table) at one level.
  double median_db(const std::string& variant, double level) const;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

enum class MismatchKind { kTaylor, kDecimation };

/// Taylor: runs the pipeline family with J = cfg.taylor_j_filter and with J = cfg.taylor_j_true, variants
/// suffixed "@J=<order>". Decimation: one run with cfg.decimation (must exceed 1).
ExperimentResult run_mismatch(MismatchKind kind, const ExperimentConfig& cfg);

struct LatencyOptions {
  std::size_t trajectories = 100;
  std::size_t length = 200;
  std::size_t repeats = 3;
  bool pin_cpu = true;
};

/// Per-step inference latency of the learned pipeline against the latent EKF with analytic and with
/// central-difference Jacobians, all sharing one encoder inference path. Uses the first noise level and
/// seed; cached weights when present, fresh initializations otherwise (timing does not depend on values).
ExperimentResult run_latency(const ExperimentConfig& cfg, const LatencyOptions& options = {});

/// Multiply-accumulates per inference step of the learned layers.
std::uint64_t encoder_macs(const encoders::EncoderArch& arch);
std::uint64_t gain_net_macs(const gain::GainNetArch& arch);
/// Dense filter algebra per EKF step (predict, innovation covariance, gain, Joseph update).
std::uint64_t ekf_macs(std::size_t m, std::size_t p);

}  // namespace latentkf::bench
