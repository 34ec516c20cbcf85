// SPDX-License-Identifier: Apache-2.0
//
// Error summaries in decibels and the versioned metrics.csv table.
#pragma once

#include "latentkf/ss_models.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace latentkf::bench {

inline constexpr const char* kMetricsSchema = "# schema=latentkf.metrics/1";

/// 10 log10(mse).
double to_db(double mse);

/// Accumulates squared errors per trajectory over the selected state entries.
class ErrorAccumulator {
 public:
  /// Empty `components` scores the full state. Errors on entries with a positive period are wrapped
  /// into half a period (empty `periods`: none periodic).
  explicit ErrorAccumulator(std::vector<std::size_t> components = {}, std::vector<double> periods = {});

  void begin_trajectory();
  void add(const models::StateVector& estimate, std::span<const float> truth);
  void add(const models::StateVector& estimate, const models::StateVector& truth);
  void end_trajectory();

  std::size_t trajectories() const { return per_trajectory_mse_.size(); }
  const std::vector<double>& per_trajectory_mse() const { return per_trajectory_mse_; }
  /// Mean over all scored steps of all trajectories.
  double mse() const;
  double mse_db() const { return to_db(mse()); }
  /// Sample standard deviation (n - 1) of the per-trajectory dB values; 0 for one trajectory.
  double std_db() const;

 private:
  double error(std::size_t i, double estimate, double truth) const;
  void accumulate(double e);

  std::vector<std::size_t> components_;
  std::vector<double> periods_;
  std::vector<double> per_trajectory_mse_;
  double total_ = 0.0;
  std::size_t steps_ = 0;
  double traj_sum_ = 0.0;
  std::size_t traj_steps_ = 0;
  bool open_ = false;
};

/// Sample standard deviation (n - 1); 0 below two values.
double sample_std(std::span<const double> values);

struct MetricRecord {
  std::string variant;
  double noise_level = 0.0;
  double mse_db = 0.0;
  double std_db = 0.0;
  double latency_us_per_step = 0.0;
  std::uint64_t param_count = 0;
  std::uint64_t op_count = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Header line, then one row per record; numbers printed with enough digits to round-trip.
std::string format_metrics_csv(const std::vector<MetricRecord>& records);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
/// Throws FormatError naming the offending line on schema, column-count or number errors.
std::vector<MetricRecord> parse_metrics_csv(const std::string& text);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

/// Median of a non-empty list.
double median(std::vector<double> values);

}  // namespace latentkf::bench
