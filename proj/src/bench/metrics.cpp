// SPDX-License-Identifier: Apache-2.0
#include "latentkf/bench/metrics.hpp"

#include "latentkf/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace latentkf::bench {

double to_db(double mse) {
  if (!(mse >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return 10.0 * std::log10(mse);
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ErrorAccumulator::ErrorAccumulator(std::vector<std::size_t> components, std::vector<double> periods)
    : components_(std::move(components)), periods_(std::move(periods)) {}

void ErrorAccumulator::begin_trajectory() {
  if (open_) throw InvalidState("error accumulator: previous trajectory still open");
  open_ = true;
  traj_sum_ = 0.0;
  traj_steps_ = 0;
}

double ErrorAccumulator::error(std::size_t i, double estimate, double truth) const {
  const double period = i < periods_.size() ? periods_[i] : 0.0;
  return models::wrap_near(estimate - truth, 0.0, period);
}

void ErrorAccumulator::accumulate(double e) {
  traj_sum_ += e;
  ++traj_steps_;
}

void ErrorAccumulator::add(const models::StateVector& estimate, std::span<const float> truth) {
  if (!open_) throw InvalidState("error accumulator: add outside a trajectory");
  if (static_cast<std::size_t>(estimate.size()) != truth.size()) throw ShapeError("error accumulator: estimate/truth size mismatch");
  double e = 0.0;
  if (components_.empty()) {
    for (std::size_t i = 0; i < truth.size(); ++i) e += std::pow(error(i, estimate(static_cast<Eigen::Index>(i)), truth[i]), 2);
  } else {
    for (std::size_t i : components_) {
      if (i >= truth.size()) throw ShapeError("error accumulator: component index out of range");
      e += std::pow(error(i, estimate(static_cast<Eigen::Index>(i)), truth[i]), 2);
    }
  }
  accumulate(e);
}

void ErrorAccumulator::add(const models::StateVector& estimate, const models::StateVector& truth) {
  if (!open_) throw InvalidState("error accumulator: add outside a trajectory");
  if (estimate.size() != truth.size()) throw ShapeError("error accumulator: estimate/truth size mismatch");
  const auto n = static_cast<std::size_t>(truth.size());
  double e = 0.0;
  auto term = [&](std::size_t i) {
    const auto k = static_cast<Eigen::Index>(i);
    return std::pow(error(i, estimate(k), truth(k)), 2);
  };
  if (components_.empty()) {
    for (std::size_t i = 0; i < n; ++i) e += term(i);
  } else {
    for (std::size_t i : components_) {
      if (i >= n) throw ShapeError("error accumulator: component index out of range");
      e += term(i);
    }
  }
  accumulate(e);
}

void ErrorAccumulator::end_trajectory() {
  if (!open_) throw InvalidState("error accumulator: no open trajectory");
  open_ = false;
  if (traj_steps_ == 0) throw InvalidArgument("error accumulator: trajectory with no scored steps");
  per_trajectory_mse_.push_back(traj_sum_ / static_cast<double>(traj_steps_));
  total_ += traj_sum_;
  steps_ += traj_steps_;
}

double ErrorAccumulator::mse() const {
  if (steps_ == 0) throw InvalidState("error accumulator: nothing scored");
  return total_ / static_cast<double>(steps_);
}

double ErrorAccumulator::std_db() const {
  std::vector<double> db;
  db.reserve(per_trajectory_mse_.size());
  for (double v : per_trajectory_mse_) db.push_back(to_db(v));
  return sample_std(db);
}

// -- CSV ---------------------------------------------------------------------------------------------

namespace {

constexpr const char* kHeader = "variant,noise_level,mse_db,std_db,latency_us_per_step,param_count,op_count,seed,config_hash";

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw FormatError("metrics.csv line " + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& s, std::size_t line, const char* column) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(line, std::string("bad number in column ") + column + ": '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line, const char* column) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    fail(line, std::string("bad integer in column ") + column + ": '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream out;
  out << kMetricsSchema << '\n' << kHeader << '\n';
  for (const auto& r : records) {
    if (r.variant.find(',') != std::string::npos || r.config_hash.find(',') != std::string::npos) {
      throw InvalidArgument("metrics: variant and hash must not contain commas");
    }
    out << r.variant << ',' << fmt(r.noise_level) << ',' << fmt(r.mse_db) << ',' << fmt(r.std_db) << ','
        << fmt(r.latency_us_per_step) << ',' << r.param_count << ',' << r.op_count << ',' << r.seed << ','
        << r.config_hash << '\n';
  }
  return out.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_metrics_csv(records);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MetricRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool schema = false, header = false;
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!schema) {
      if (line != kMetricsSchema) fail(lineno, "expected schema line '" + std::string(kMetricsSchema) + "'");
      schema = true;
      continue;
    }
    if (!header) {
      if (line != kHeader) fail(lineno, "unexpected header '" + line + "'");
      header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 9) fail(lineno, "expected 9 columns, found " + std::to_string(f.size()));
    MetricRecord r;
    r.variant = f[0];
    if (r.variant.empty()) fail(lineno, "empty variant");
    r.noise_level = parse_double(f[1], lineno, "noise_level");
    r.mse_db = parse_double(f[2], lineno, "mse_db");
    r.std_db = parse_double(f[3], lineno, "std_db");
    r.latency_us_per_step = parse_double(f[4], lineno, "latency_us_per_step");
    r.param_count = parse_uint(f[5], lineno, "param_count");
    r.op_count = parse_uint(f[6], lineno, "op_count");
    r.seed = parse_uint(f[7], lineno, "seed");
    r.config_hash = f[8];
    out.push_back(std::move(r));
  }
  if (!schema) fail(1, "empty file");
  if (!header) fail(lineno + 1, "missing header");
  return out;
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

}  // namespace latentkf::bench
