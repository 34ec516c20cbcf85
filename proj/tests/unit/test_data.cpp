// SPDX-License-Identifier: Apache-2.0
#include "latentkf/data.hpp"
#include "latentkf/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace latentkf;
using namespace latentkf::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("latentkf-test-data-" + name);
  fs::remove_all(dir);
  return dir;
}

Dataset small_pendulum(std::uint64_t seed = 3) {
  const auto spec = models::make_pendulum_spec(models::ObservationNoise::gaussian_from_level(23.0));
  return generate_dataset(spec, 10, 6, InitialStateRule::pendulum_from_rest(), seed);
}

}  // namespace

TEST_CASE("default splits are 80/10/10 with leftovers in train") {
  const auto s = SplitSizes::default_for(200);
  CHECK(s.train == 160);
  CHECK(s.validation == 20);
  CHECK(s.test == 20);
  const auto odd = SplitSizes::default_for(13);
  CHECK(odd.total() == 13);
  CHECK(odd.validation == 1);
  CHECK(odd.test == 1);
}

TEST_CASE("generated datasets have the declared shape and start from the initial rule") {
  const auto ds = small_pendulum();
  CHECK(ds.count() == 10);
  CHECK(ds.length() == 6);
  CHECK(ds.state_dim() == 2);
  CHECK(ds.frame_size() == 28 * 28);
  CHECK(ds.states().size() == 10 * 6 * 2);
  CHECK(ds.frames().size() == 10 * 6 * 28 * 28);
  for (std::size_t d = 0; d < ds.count(); ++d) {
    const auto x0 = ds.state(d, 0);
    CHECK(x0(0) >= std::numbers::pi / 6.0 - 1e-6);
    CHECK(x0(0) <= std::numbers::pi / 2.0 + 1e-6);
    CHECK(x0(1) == 0.0);
  }
  const auto sp = ds.splits();
  CHECK(sp.train.size() + sp.validation.size() + sp.test.size() == 10);
}

TEST_CASE("generation is reproducible from the seed and per-trajectory streams") {
  const auto a = small_pendulum(3), b = small_pendulum(3), c = small_pendulum(4);
  CHECK(a.states() == b.states());
  CHECK(a.frames() == b.frames());
  CHECK(a.states() != c.states());
  CHECK(trajectory_seed(3, 0) != trajectory_seed(3, 1));
  // Trajectory d depends only on (seed, d), not on D.
  const auto spec = models::make_pendulum_spec(models::ObservationNoise::gaussian_from_level(23.0));
  const auto longer = generate_dataset(spec, 12, 6, InitialStateRule::pendulum_from_rest(), 3);
  for (std::size_t t = 0; t < 6; ++t) CHECK(longer.state(4, t) == a.state(4, t));
}

TEST_CASE("process noise has variance q2 on the noise-free prediction") {
  models::SSModelSpec spec = models::make_lorenz_spec(std::nullopt);
  const auto ds = generate_dataset(spec, 40, 40, InitialStateRule::lorenz_near_attractor(), 9);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < ds.count(); ++d)
    for (std::size_t t = 1; t < ds.length(); ++t) {
      const auto pred = spec.dynamics->evolve(ds.state(d, t - 1));
      // States are stored in float32; the residual keeps that rounding.
      sum += (ds.state(d, t) - pred).squaredNorm();
      n += 3;
    }
  CHECK(sum / static_cast<double>(n) == doctest::Approx(models::kLorenzQ2).epsilon(0.1));
}

TEST_CASE("decimated generation keeps every ratio-th fine step") {
  auto dense = models::make_lorenz_spec(std::nullopt, models::LorenzConfig{5, 0.02 / 4.0}, 0.0);
  const auto rule = InitialStateRule::fixed(Eigen::Vector3d(1.0, 2.0, 20.0));
  const auto ds = generate_decimated(dense, 4, 1, 5, rule, 1);
  CHECK(ds.length() == 5);
  CHECK(ds.manifest().generation.decimation == 4);
  models::StateVector x = ds.state(0, 0);
  for (std::size_t t = 1; t < 5; ++t) {
    for (int k = 0; k < 4; ++k) x = dense.dynamics->evolve(x);
    CHECK((ds.state(0, t) - x).norm() < 1e-4 * (1.0 + x.norm()));
    x = ds.state(0, t);
  }
}

TEST_CASE("dataset round-trips through disk bit for bit") {
  const auto ds = small_pendulum();
  const auto dir = scratch_dir("roundtrip");
  save_dataset(ds, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::file_size(dir / "states.f32") == ds.states().size() * 4);
  CHECK(fs::file_size(dir / "frames.f32") == ds.frames().size() * 4);
  const auto back = load_dataset(dir);
  CHECK(back.states() == ds.states());
  CHECK(back.frames() == ds.frames());
  CHECK(manifest_to_json(back.manifest()) == manifest_to_json(ds.manifest()));
  fs::remove_all(dir);
}

TEST_CASE("truncated arrays are reported as format errors") {
  const auto ds = small_pendulum();
  const auto dir = scratch_dir("truncated");
  save_dataset(ds, dir);
  fs::resize_file(dir / "frames.f32", fs::file_size(dir / "frames.f32") - 6);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  fs::resize_file(dir / "frames.f32", fs::file_size(dir / "frames.f32") - 2);  // whole floats, wrong count
  try {
    load_dataset(dir);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("frames") != std::string::npos);
  }
  fs::remove(dir / "states.f32");
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("malformed manifests are rejected") {
  CHECK_THROWS_AS(manifest_from_json("{not json"), FormatError);
  auto j = manifest_to_json(small_pendulum().manifest());
  const auto pos = j.find("\"format_version\":1");
  if (pos != std::string::npos) {
    j.replace(pos, std::string("\"format_version\":1").size(), "\"format_version\":99");
    CHECK_THROWS_AS(manifest_from_json(j), FormatError);
  }
  CHECK_THROWS_AS(load_dataset(scratch_dir("missing")), FormatError);
}

TEST_CASE("subset keeps the listed trajectories") {
  const auto ds = small_pendulum();
  const std::vector<std::size_t> idx{7, 2};
  const auto sub = ds.subset(idx);
  CHECK(sub.count() == 2);
  CHECK(sub.state(0, 3) == ds.state(7, 3));
  CHECK(sub.state(1, 5) == ds.state(2, 5));
  const std::vector<std::size_t> bad{10};
  CHECK_THROWS_AS(ds.subset(bad), InvalidArgument);
}

TEST_CASE("f32 helpers are little-endian float32") {
  const auto dir = scratch_dir("f32");
  fs::create_directories(dir);
  const std::vector<float> v{1.0f, -2.5f, 3.25f};
  write_f32(dir / "a.f32", v);
  std::ifstream in(dir / "a.f32", std::ios::binary);
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[3] == 0x3f);  // 1.0f = 0x3f800000
  CHECK(read_f32(dir / "a.f32", "a") == v);
  fs::remove_all(dir);
}
