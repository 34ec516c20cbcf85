// SPDX-License-Identifier: Apache-2.0
#include "latentkf/bench/metrics.hpp"
#include "latentkf/bench/plot.hpp"
#include "latentkf/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace latentkf;
using namespace latentkf::bench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::vector<MetricRecord> golden_records() {
  return {{"latent-kalmannet", 2.0, -11.25, 1.5, 12.5, 1234, 5678, 0, "00ff00ff00ff00ff"},
          {"encoder", 0.3, -0.1, 0.0, 0.0, 10, 20, 3, "abc"}};
}

}  // namespace

TEST_CASE("squared error 0.01 reports exactly -20 dB") {
  ErrorAccumulator acc;
  for (int d = 0; d < 3; ++d) {
    acc.begin_trajectory();
    for (int t = 0; t < 5; ++t) {
      models::StateVector est(2), truth(2);
      est << 0.1, 0.0;
      truth << 0.0, 0.0;
      // Squared error 0.01 per scored step, split over two entries on the first trajectory.
      if (d == 0) est << std::sqrt(0.005), -std::sqrt(0.005);
      acc.add(est, truth);
    }
    acc.end_trajectory();
  }
  CHECK(acc.mse() == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(acc.mse_db() == doctest::Approx(-20.0).epsilon(1e-12));
  CHECK(to_db(0.01) == -20.0);
  CHECK(acc.std_db() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("std_dB is the sample standard deviation of per-trajectory dB values") {
  CHECK(sample_std(std::vector<double>{-3.2, -5.7, -4.1, -6.0}) == doctest::Approx(1.3279056191361394).epsilon(1e-14));
  CHECK(sample_std(std::vector<double>{4.0}) == 0.0);
  ErrorAccumulator acc({0});
  for (double mse : {0.1, 0.01, 0.001}) {
    acc.begin_trajectory();
    models::StateVector e(1), z(1);
    e << std::sqrt(mse);
    z << 0.0;
    acc.add(e, z);
    acc.end_trajectory();
  }
  CHECK(acc.std_db() == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(acc.mse() == doctest::Approx(0.111 / 3.0));
}

TEST_CASE("component selection and periodic wrapping") {
  const double tau = 2.0 * std::numbers::pi;
  ErrorAccumulator acc({0}, {tau, 0.0});
  acc.begin_trajectory();
  models::StateVector e(2), t(2);
  e << 0.1 + tau, 100.0;
  t << 0.0, 0.0;
  acc.add(e, t);
  std::vector<float> tf{0.0f, 0.0f};
  acc.add(e, std::span<const float>(tf));
  acc.end_trajectory();
  CHECK(acc.mse() == doctest::Approx(0.01));
}

TEST_CASE("accumulator misuse is reported") {
  ErrorAccumulator acc;
  models::StateVector e = models::StateVector::Zero(2);
  CHECK_THROWS_AS(acc.add(e, e), InvalidState);
  acc.begin_trajectory();
  CHECK_THROWS_AS(acc.begin_trajectory(), InvalidState);
  CHECK_THROWS_AS(acc.add(e, models::StateVector::Zero(3)), ShapeError);
  CHECK_THROWS(acc.end_trajectory());
  CHECK_THROWS_AS(median({}), InvalidArgument);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("metrics CSV matches the golden file") {
  const auto text = format_metrics_csv(golden_records());
  CHECK(text == slurp(fs::path(LATENTKF_TEST_DATA_DIR) / "metrics_golden.csv"));
  const auto back = parse_metrics_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].variant == "latent-kalmannet");
  CHECK(back[0].mse_db == -11.25);
  CHECK(back[1].noise_level == 0.3);
  CHECK(back[1].config_hash == "abc");
  CHECK(format_metrics_csv(back) == text);
}

TEST_CASE("numbers round-trip exactly") {
  MetricRecord r{"x", 1.0 / 3.0, -std::numbers::pi, 1e-300, 123456.789, 1, 2, 18446744073709551615ULL, "h"};
  const auto back = parse_metrics_csv(format_metrics_csv({r}));
  CHECK(back[0].noise_level == r.noise_level);
  CHECK(back[0].mse_db == r.mse_db);
  CHECK(back[0].std_db == r.std_db);
  CHECK(back[0].seed == r.seed);
  MetricRecord inf{"y", 1.0, std::numeric_limits<double>::infinity(), 0.0, 0.0, 0, 0, 0, "h"};
  CHECK(std::isinf(parse_metrics_csv(format_metrics_csv({inf}))[0].mse_db));
}

TEST_CASE("malformed CSV names the offending line") {
  const std::string head = std::string(kMetricsSchema) +
                           "\nvariant,noise_level,mse_db,std_db,latency_us_per_step,param_count,op_count,seed,config_hash\n";
  auto line_of = [](const std::string& text) {
    try {
      parse_metrics_csv(text);
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(line_of(head + "a,1,2,3,4,5,6,7,h\nb,1,oops,3,4,5,6,7,h\n").find("line 4") != std::string::npos);
  CHECK(line_of(head + "a,1,2,3\n").find("line 3") != std::string::npos);
  CHECK(line_of(head + ",1,2,3,4,5,6,7,h\n").find("line 3") != std::string::npos);
  CHECK(line_of(head + "a,1,2,3,4,-5,6,7,h\n").find("line 3") != std::string::npos);
  CHECK(line_of("variant,noise_level\n").find("line 1") != std::string::npos);
  CHECK(line_of(std::string(kMetricsSchema) + "\nwrong,header\n").find("line 2") != std::string::npos);
  CHECK(line_of("").find("line 1") != std::string::npos);
}

TEST_CASE("plot has one x tick per noise level and is byte-stable") {
  std::vector<MetricRecord> recs;
  for (double level : {0.3, 1.0, 2.0, 3.0})
    for (std::uint64_t seed : {0, 1, 2})
      for (const char* v : {"encoder", "latent-kalmannet"})
        recs.push_back({v, level, -level * 3.0 - static_cast<double>(seed), 0.5, 0.0, 0, 0, seed, "h"});
  const fs::path dir = fs::temp_directory_path() / "latentkf-test-plot";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", recs);
  std::vector<std::string> warnings;
  const auto files = plot_metrics_file(dir / "metrics.csv", dir / "a", &warnings);
  REQUIRE(files.size() == 1);
  CHECK(files[0].filename() == "metrics.svg");
  CHECK(warnings.empty());
  const auto svg = slurp(files[0]);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count_of(svg, "class=\"xtick\"") == 4);
  CHECK(svg.find("latent-kalmannet") != std::string::npos);
  const auto again = plot_metrics_file(dir / "metrics.csv", dir / "b", &warnings);
  CHECK(slurp(again[0]) == svg);
  fs::remove_all(dir);
}

TEST_CASE("variants without finite points are dropped with a warning") {
  std::vector<MetricRecord> recs{{"encoder", 2.0, -1.0, 0.1, 0, 0, 0, 0, "h"},
                                 {"broken", 2.0, std::nan(""), 0.0, 0, 0, 0, 0, "h"}};
  std::vector<std::string> warnings;
  const auto series = collect_series(recs, &warnings);
  REQUIRE(series.size() == 1);
  CHECK(series[0].variant == "encoder");
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("broken") != std::string::npos);
  CHECK_THROWS_AS(render_svg({}, {}), InvalidArgument);
}

TEST_CASE("series take the median over seeds") {
  std::vector<MetricRecord> recs;
  for (double v : {-1.0, -5.0, -2.0}) recs.push_back({"e", 1.0, v, 0.0, 0, 0, 0, 0, "h"});
  const auto s = collect_series(recs, nullptr);
  CHECK(s[0].mse_db[0] == -2.0);
}
