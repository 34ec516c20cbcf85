// SPDX-License-Identifier: Apache-2.0
//
// Deterministic SVG line plots of MSE [dB] against noise level, one line per variant.
// Output depends only on the input records: no timestamps, fixed float formatting.
#pragma once

#include "latentkf/bench/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace latentkf::bench {

struct PlotOptions {
  std::string title = "MSE vs noise level";
  std::string x_label = "noise level";
  std::string y_label = "MSE [dB]";
  int width = 640;
  int height = 420;
};

/// One point per (variant, level): median mse_db over seeds with a +-median std_db bar.
struct PlotSeries {
  std::string variant;
  std::vector<double> levels;
  std::vector<double> mse_db;
  std::vector<double> std_db;
};

/// Variants without any finite point are dropped and reported through `warnings`.
std::vector<PlotSeries> collect_series(const std::vector<MetricRecord>& records, std::vector<std::string>* warnings);

std::string render_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

/// Reads `csv` and writes <out_dir>/<csv stem>.svg; returns the written files (empty when nothing is plottable).
std::vector<std::filesystem::path> plot_metrics_file(const std::filesystem::path& csv, const std::filesystem::path& out_dir,
                                                     std::vector<std::string>* warnings, const PlotOptions& options = {});

}  // namespace latentkf::bench
