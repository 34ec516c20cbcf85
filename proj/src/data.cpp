// SPDX-License-Identifier: Apache-2.0
#include "latentkf/data.hpp"

#include "latentkf/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace latentkf::data {

namespace fs = std::filesystem;
using nlohmann::json;

SplitSizes SplitSizes::default_for(std::size_t count) {
  SplitSizes s;
  s.validation = count / 10;
  s.test = count / 10;
  s.train = count - s.validation - s.test;
  return s;
}

// -- initial states --------------------------------------------------------------

InitialStateRule InitialStateRule::pendulum_from_rest() {
  InitialStateRule rule;
  rule.draw = [](Rng& rng) {
    std::uniform_real_distribution<double> angle(std::numbers::pi / 6.0, std::numbers::pi / 2.0);
    StateVector x(2);
    x << angle(rng), 0.0;
    return x;
  };
  return rule;
}

InitialStateRule InitialStateRule::lorenz_near_attractor() {
  InitialStateRule rule;
  rule.draw = [](Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    StateVector x(3);
    for (int i = 0; i < 3; ++i) x(i) = 1.0 + normal(rng);
    return x;
  };
  rule.burn_in = 50;
  return rule;
}

InitialStateRule InitialStateRule::for_model(models::ModelKind kind) {
  return kind == models::ModelKind::kPendulum ? pendulum_from_rest() : lorenz_near_attractor();
}

InitialStateRule InitialStateRule::fixed(StateVector x0) {
  InitialStateRule rule;
  rule.draw = [x0](Rng&) { return x0; };
  return rule;
}

// -- dataset container -----------------------------------------------------------

Dataset::Dataset(DatasetManifest manifest, std::vector<float> states, std::vector<float> frames)
    : manifest_(std::move(manifest)), states_(std::move(states)), frames_(std::move(frames)) {
  const std::size_t dt = manifest_.count * manifest_.trajectory_length;
  if (states_.size() != dt * manifest_.m) throw FormatError("states array does not match manifest shape");
  if (frames_.size() != dt * manifest_.n) throw FormatError("frames array does not match manifest shape");
  if (manifest_.splits.total() != manifest_.count) throw FormatError("split sizes do not add up to D");
}

std::span<const float> Dataset::state_span(std::size_t d, std::size_t t) const {
  const std::size_t m = manifest_.m;
  return {states_.data() + (d * manifest_.trajectory_length + t) * m, m};
}

std::span<const float> Dataset::frame_span(std::size_t d, std::size_t t) const {
  const std::size_t n = manifest_.n;
  return {frames_.data() + (d * manifest_.trajectory_length + t) * n, n};
}

StateVector Dataset::state(std::size_t d, std::size_t t) const {
  auto s = state_span(d, t);
  StateVector x(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) x(static_cast<Eigen::Index>(i)) = s[i];
  return x;
}

SplitIndices Dataset::splits() const {
  SplitIndices out;
  const auto& s = manifest_.splits;
  std::size_t i = 0;
  for (; i < s.train; ++i) out.train.push_back(i);
  for (; i < s.train + s.validation; ++i) out.validation.push_back(i);
  for (; i < s.total(); ++i) out.test.push_back(i);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  DatasetManifest man = manifest_;
  man.count = indices.size();
  man.splits = SplitSizes{0, 0, indices.size()};
  const std::size_t t_len = manifest_.trajectory_length;
  std::vector<float> st, fr;
  st.reserve(indices.size() * t_len * man.m);
  fr.reserve(indices.size() * t_len * man.n);
  for (std::size_t d : indices) {
    if (d >= count()) throw InvalidArgument("subset index out of range");
    auto s0 = states_.begin() + static_cast<std::ptrdiff_t>(d * t_len * man.m);
    st.insert(st.end(), s0, s0 + static_cast<std::ptrdiff_t>(t_len * man.m));
    auto f0 = frames_.begin() + static_cast<std::ptrdiff_t>(d * t_len * man.n);
    fr.insert(fr.end(), f0, f0 + static_cast<std::ptrdiff_t>(t_len * man.n));
  }
  return Dataset(std::move(man), std::move(st), std::move(fr));
}

// -- generation ------------------------------------------------------------------

std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

StateVector noisy_step(const SSModelSpec& spec, const StateVector& x, double q2, Rng& rng) {
  StateVector next = spec.dynamics->evolve(x);
  if (q2 > 0.0) {
    std::normal_distribution<double> normal(0.0, std::sqrt(q2));
    for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += normal(rng);
  }
  models::require_finite(next, "trajectory simulation");
  return next;
}

DatasetManifest base_manifest(const SSModelSpec& spec, std::size_t count, std::size_t length) {
  DatasetManifest man;
  man.model = models::to_string(spec.kind);
  man.m = spec.m();
  man.n = spec.n();
  man.p = spec.p();
  man.height = spec.height;
  man.width = spec.width;
  man.trajectory_length = length;
  man.count = count;
  if (spec.obs_noise) {
    man.noise = spec.obs_noise->describe();
    man.noise_level = spec.obs_noise->level();
  }
  return man;
}

void fill_generation(GenerationConfig& gen, const SSModelSpec& spec) {
  gen.q2 = spec.q2;
  if (auto* lorenz = dynamic_cast<const models::LorenzDynamics*>(spec.dynamics.get())) {
    gen.taylor_order = lorenz->config().taylor_order;
    gen.dt = lorenz->config().dt;
  } else if (auto* pend = dynamic_cast<const models::PendulumDynamics*>(spec.dynamics.get())) {
    gen.dt = pend->dt();
  }
}

Dataset assemble(const SSModelSpec& spec, DatasetManifest man, const std::vector<Trajectory>& trajs) {
  std::vector<float> st, fr;
  st.reserve(man.count * man.trajectory_length * man.m);
  fr.reserve(man.count * man.trajectory_length * man.n);
  for (const auto& tr : trajs) {
    for (std::size_t t = 0; t < tr.states.size(); ++t) {
      for (Eigen::Index i = 0; i < tr.states[t].size(); ++i) st.push_back(static_cast<float>(tr.states[t](i)));
      for (double px : tr.frames[t].pixels) fr.push_back(static_cast<float>(px));
    }
  }
  (void)spec;
  return Dataset(std::move(man), std::move(st), std::move(fr));
}

}  // namespace

Trajectory simulate_trajectory(const SSModelSpec& spec, std::size_t length, const InitialStateRule& x0_rule,
                               std::uint64_t seed, std::size_t decimation) {
  if (length < 1) throw InvalidArgument("trajectory length must be >= 1");
  if (decimation < 1) throw InvalidArgument("decimation ratio must be >= 1");
  Rng rng(seed);
  const double q2 = spec.q2 / static_cast<double>(decimation);
  StateVector x = x0_rule.draw(rng);
  if (static_cast<std::size_t>(x.size()) != spec.m()) throw ShapeError("initial state has wrong length");
  for (std::size_t b = 0; b < x0_rule.burn_in * decimation; ++b) x = noisy_step(spec, x, q2, rng);

  Trajectory tr;
  tr.seed = seed;
  tr.states.reserve(length);
  tr.frames.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      for (std::size_t k = 0; k < decimation; ++k) x = noisy_step(spec, x, q2, rng);
    }
    tr.states.push_back(x);
    tr.frames.push_back(spec.observe(x, rng));
  }
  return tr;
}

Dataset generate_dataset(const SSModelSpec& spec, std::size_t count, std::size_t length,
                         const InitialStateRule& x0_rule, std::uint64_t seed, std::optional<SplitSizes> splits) {
  return generate_decimated(spec, 1, count, length, x0_rule, seed, splits);
}

Dataset generate_decimated(const SSModelSpec& dense_spec, std::size_t ratio, std::size_t count, std::size_t length,
                           const InitialStateRule& x0_rule, std::uint64_t seed, std::optional<SplitSizes> splits) {
  if (count < 1) throw InvalidArgument("dataset needs D >= 1");
  if (ratio < 1) throw InvalidArgument("decimation ratio must be >= 1");
  DatasetManifest man = base_manifest(dense_spec, count, length);
  man.splits = splits ? *splits : SplitSizes::default_for(count);
  if (man.splits.total() != count) throw InvalidArgument("split sizes must add up to D");
  fill_generation(man.generation, dense_spec);
  man.generation.dt *= static_cast<double>(ratio);
  man.generation.decimation = ratio;
  man.generation.seed = seed;
  man.generation.burn_in = x0_rule.burn_in;

  std::vector<Trajectory> trajs;
  trajs.reserve(count);
  for (std::size_t d = 0; d < count; ++d) {
    trajs.push_back(simulate_trajectory(dense_spec, length, x0_rule, trajectory_seed(seed, d), ratio));
  }
  return assemble(dense_spec, std::move(man), trajs);
}

// -- storage -----------------------------------------------------------------------

void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<float> read_f32(const fs::path& path, const std::string& array_name) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw FormatError(array_name + ": missing array file " + path.string());
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError(array_name + ": cannot stat " + path.string());
  if (bytes % sizeof(float) != 0) {
    throw FormatError(array_name + ": truncated array (" + std::to_string(bytes) + " bytes is not a multiple of 4)");
  }
  std::vector<float> values(bytes / sizeof(float));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(array_name + ": cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError(array_name + ": short read");
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xFF00U) | ((bits << 8) & 0xFF0000U) | (bits << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  return values;
}

std::string manifest_to_json(const DatasetManifest& man) {
  json j;
  j["format_version"] = man.format_version;
  j["model"] = man.model;
  j["m"] = man.m;
  j["n"] = man.n;
  j["p"] = man.p;
  j["height"] = man.height;
  j["width"] = man.width;
  j["T"] = man.trajectory_length;
  j["D"] = man.count;
  j["noise"] = man.noise;
  j["noise_level"] = man.noise_level;
  j["splits"] = {{"train", man.splits.train}, {"validation", man.splits.validation}, {"test", man.splits.test}};
  j["generation"] = {{"taylor_order", man.generation.taylor_order},
                     {"dt", man.generation.dt},
                     {"decimation", man.generation.decimation},
                     {"q2", man.generation.q2},
                     {"seed", man.generation.seed},
                     {"burn_in", man.generation.burn_in}};
  j["arrays"] = {{"states", {{"file", "states.f32"}, {"dtype", "float32-le"}, {"shape", {man.count, man.trajectory_length, man.m}}}},
                 {"frames", {{"file", "frames.f32"}, {"dtype", "float32-le"}, {"shape", {man.count, man.trajectory_length, man.n}}}}};
  return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  DatasetManifest man;
  try {
    man.format_version = j.at("format_version").get<int>();
    if (man.format_version != kDatasetFormatVersion) {
      throw FormatError("manifest.json: unsupported format_version " + std::to_string(man.format_version));
    }
    man.model = j.at("model").get<std::string>();
    man.m = j.at("m").get<std::size_t>();
    man.n = j.at("n").get<std::size_t>();
    man.p = j.at("p").get<std::size_t>();
    man.height = j.at("height").get<std::size_t>();
    man.width = j.at("width").get<std::size_t>();
    man.trajectory_length = j.at("T").get<std::size_t>();
    man.count = j.at("D").get<std::size_t>();
    man.noise = j.at("noise").get<std::string>();
    man.noise_level = j.at("noise_level").get<double>();
    const auto& s = j.at("splits");
    man.splits = {s.at("train").get<std::size_t>(), s.at("validation").get<std::size_t>(),
                  s.at("test").get<std::size_t>()};
    const auto& g = j.at("generation");
    man.generation.taylor_order = g.at("taylor_order").get<int>();
    man.generation.dt = g.at("dt").get<double>();
    man.generation.decimation = g.at("decimation").get<std::size_t>();
    man.generation.q2 = g.at("q2").get<double>();
    man.generation.seed = g.at("seed").get<std::uint64_t>();
    man.generation.burn_in = g.value("burn_in", std::size_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (man.n != man.height * man.width) throw FormatError("manifest.json: n != height * width");
  return man;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  write_f32(dir / "states.f32", dataset.states());
  write_f32(dir / "frames.f32", dataset.frames());
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest_to_json(dataset.manifest()) << '\n';
}

namespace {

void check_array(const std::string& name, std::size_t values, std::size_t per_trajectory, std::size_t count) {
  if (per_trajectory == 0) throw FormatError(name + ": zero-sized trajectories in manifest");
  if (values % per_trajectory != 0) {
    throw FormatError(name + ": truncated array (" + std::to_string(values) +
                      " values is not a whole number of trajectories)");
  }
  const std::size_t found = values / per_trajectory;
  if (found != count) {
    throw FormatError(name + ": manifest declares D=" + std::to_string(count) + " but " + std::to_string(found) +
                      " trajectories are stored");
  }
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("manifest.json: missing in " + dir.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest man = manifest_from_json(buf.str());
  auto states = read_f32(dir / "states.f32", "states");
  auto frames = read_f32(dir / "frames.f32", "frames");
  check_array("states", states.size(), man.trajectory_length * man.m, man.count);
  check_array("frames", frames.size(), man.trajectory_length * man.n, man.count);
  return Dataset(std::move(man), std::move(states), std::move(frames));
}

}  // namespace latentkf::data
