// SPDX-License-Identifier: Apache-2.0
//
// Labeled trajectory datasets: generation from an SSModelSpec, the
// decimated-sampling variant, and the on-disk format
//
//   <dir>/manifest.json   DatasetManifest (UTF-8 JSON)
//   <dir>/states.f32      little-endian float32, row-major (D, T, m)
//   <dir>/frames.f32      little-endian float32, row-major (D, T, n)
#pragma once

#include "latentkf/ss_models.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace latentkf::data {

using models::ObservationFrame;
using models::Rng;
using models::SSModelSpec;
using models::StateVector;

inline constexpr int kDatasetFormatVersion = 1;

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + validation + test; }
  /// 80 / 10 / 10 by trajectory; rounding leftovers go to train.
  static SplitSizes default_for(std::size_t count);
};

struct GenerationConfig {
  int taylor_order = 0;  // 0 when the model has no Taylor series
  double dt = 0.0;
  std::size_t decimation = 1;
  double q2 = 0.0;
  std::uint64_t seed = 0;
  std::size_t burn_in = 0;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::string model;
  std::size_t m = 0, n = 0, p = 0;
  std::size_t height = 0, width = 0;
  std::size_t trajectory_length = 0;  // T
  std::size_t count = 0;              // D
  std::string noise = "none";
  double noise_level = 0.0;
  SplitSizes splits;
  GenerationConfig generation;
};

/// Rule drawing x_0 for one trajectory, followed by `burn_in` discarded noisy steps.
struct InitialStateRule {
  std::function<StateVector(Rng&)> draw;
  std::size_t burn_in = 0;

  /// Pendulum released from rest at phi_0 ~ U[pi/6, pi/2].
  static InitialStateRule pendulum_from_rest();
  /// Lorenz x_0 = [1,1,1] + N(0, I), then 50 burn-in steps.
  static InitialStateRule lorenz_near_attractor();
  static InitialStateRule for_model(models::ModelKind kind);
  static InitialStateRule fixed(StateVector x0);
};

struct Trajectory {
  std::vector<StateVector> states;
  std::vector<ObservationFrame> frames;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// In-memory dataset with float32 storage matching the on-disk arrays bit for bit.
class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, std::vector<float> states, std::vector<float> frames);

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t count() const { return manifest_.count; }
  std::size_t length() const { return manifest_.trajectory_length; }
  std::size_t state_dim() const { return manifest_.m; }
  std::size_t frame_size() const { return manifest_.n; }

  std::span<const float> state_span(std::size_t d, std::size_t t) const;
  std::span<const float> frame_span(std::size_t d, std::size_t t) const;
  StateVector state(std::size_t d, std::size_t t) const;

  const std::vector<float>& states() const { return states_; }
  const std::vector<float>& frames() const { return frames_; }

  SplitIndices splits() const;
  /// New dataset holding the listed trajectories (manifest splits reset to all-test).
  Dataset subset(std::span<const std::size_t> indices) const;

 private:
  DatasetManifest manifest_;
  std::vector<float> states_;
  std::vector<float> frames_;
};

/// Seed of the rng stream used for trajectory `index`.
std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t index);

Trajectory simulate_trajectory(const SSModelSpec& spec, std::size_t length, const InitialStateRule& x0_rule,
                               std::uint64_t seed, std::size_t decimation = 1);

Dataset generate_dataset(const SSModelSpec& spec, std::size_t count, std::size_t length,
                         const InitialStateRule& x0_rule, std::uint64_t seed,
                         std::optional<SplitSizes> splits = std::nullopt);

/// Simulates `dense_spec` (whose dynamics run at the fine interval) with per-step noise q2/ratio
/// and keeps every ratio-th state. `length` counts kept samples.
Dataset generate_decimated(const SSModelSpec& dense_spec, std::size_t ratio, std::size_t count,
                           std::size_t length, const InitialStateRule& x0_rule, std::uint64_t seed,
                           std::optional<SplitSizes> splits = std::nullopt);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Shared little-endian float32 array helpers (datasets and checkpoints).
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path, const std::string& array_name);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

}  // namespace latentkf::data
