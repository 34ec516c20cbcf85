// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/checkpoint.hpp"

#include "latentkf/data.hpp"
#include "latentkf/error.hpp"

#include <fstream>
#include <sstream>

namespace latentkf::ad {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const ParamSet<float>& params, const fs::path& dir, const json& metadata) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json entries = json::array();
  std::vector<float> flat;
  flat.reserve(params.total_count());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    entries.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", flat.size()}, {"trainable", p.trainable}});
    flat.insert(flat.end(), p.value.data.begin(), p.value.data.end());
  }
  json man = {{"format_version", kCheckpointFormatVersion},
              {"dtype", "float32-le"},
              {"count", flat.size()},
              {"params", entries},
              {"metadata", metadata}};
  data::write_f32(dir / "params.f32", flat);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
  out << man.dump(2) << '\n';
}

ParamSet<float> load_checkpoint(const fs::path& dir, json* metadata) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("checkpoint manifest.json missing in " + dir.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ParamSet<float> params;
  try {
    json man = json::parse(buf.str());
    if (man.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw FormatError("checkpoint manifest.json: unsupported format_version");
    }
    const auto values = data::read_f32(dir / "params.f32", "params");
    if (values.size() != man.at("count").get<std::size_t>()) {
      throw FormatError("params: manifest declares " + std::to_string(man.at("count").get<std::size_t>()) +
                        " values but the file holds " + std::to_string(values.size()));
    }
    for (const auto& e : man.at("params")) {
      auto& p = params.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.value("trainable", true));
      const std::size_t off = e.at("offset").get<std::size_t>();
      if (off + p.value.size() > values.size()) throw FormatError("params: entry '" + p.name + "' runs past the array end");
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
                values.begin() + static_cast<std::ptrdiff_t>(off + p.value.size()), p.value.data.begin());
    }
    if (metadata) *metadata = man.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest.json: ") + e.what());
  }
  return params;
}

void load_checkpoint_into(ParamSet<float>& params, const fs::path& dir, json* metadata) {
  ParamSet<float> loaded = load_checkpoint(dir, metadata);
  if (loaded.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(loaded.size()) + " parameters, expected " +
                      std::to_string(params.size()));
  }
  params.assign_from(loaded);
}

}  // namespace latentkf::ad
