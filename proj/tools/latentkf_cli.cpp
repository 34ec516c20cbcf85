// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library through the C ABI only.
#include "latentkf.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

struct Common {
  std::string model = "lorenz";
  std::vector<double> noise_levels;
  std::vector<std::string> variants;
  std::size_t t_train = 0, t_test = 0;
  int taylor_j = 0;
  std::size_t decimate = 0;
  std::vector<std::uint64_t> seeds;
  std::string out = "out";
  bool full_scale = false;
  std::size_t count = 0;
  std::size_t epochs = 0;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--model", c.model, "pendulum | lorenz")->check(CLI::IsMember({"pendulum", "lorenz"}));
  app->add_option("--noise-level", c.noise_levels, "noise level(s) on the model's axis");
  app->add_option("--variant", c.variants, "encoder | encoder+prior | encoder+prior+ekf | latent-kalmannet");
  app->add_option("--t-train", c.t_train, "training trajectory length");
  app->add_option("--t-test", c.t_test, "test trajectory length");
  app->add_option("--taylor-j", c.taylor_j, "Taylor order of the filter-side Lorenz model");
  app->add_option("--decimate", c.decimate, "sub-sampling ratio of the data relative to the filter model");
  app->add_option("--seed", c.seeds, "seed(s)");
  app->add_option("--out", c.out, "output directory");
  app->add_flag("--full-scale", c.full_scale, "D=1000, T=200, four noise levels");
  app->add_option("--count", c.count, "number of training trajectories D");
  app->add_option("--epochs", c.epochs, "alternating epochs");
  app->add_flag("-q,--quiet", c.quiet, "suppress progress lines");
}

json to_config(const Common& c) {
  json j = {{"model", c.model}, {"out", c.out}, {"full_scale", c.full_scale}};
  if (!c.noise_levels.empty()) j["noise_levels"] = c.noise_levels;
  if (!c.variants.empty()) j["variants"] = c.variants;
  if (c.t_train) j["t_train"] = c.t_train;
  if (c.t_test) j["t_test"] = c.t_test;
  if (c.taylor_j) j["taylor_j"] = c.taylor_j;
  if (c.decimate) j["decimate"] = c.decimate;
  if (!c.seeds.empty()) j["seeds"] = c.seeds;
  if (c.count) j["count"] = c.count;
  if (c.epochs) j["epochs"] = c.epochs;
  if (const char* cache = std::getenv("LATENTKF_CACHE"); cache && *cache) j["cache_dir"] = cache;
  return j;
}

int fail(lkf_status s) {
  std::fprintf(stderr, "error (%s): %s\n", lkf_status_string(s), lkf_last_error());
  return static_cast<int>(s);
}

void print_records(const json& result) {
  if (result.contains("records") && !result["records"].empty()) {
    std::printf("%-40s %8s %10s %8s %12s %10s %6s\n", "variant", "level", "mse_db", "std_db", "us/step", "params", "seed");
    for (const auto& r : result["records"]) {
      auto num = [](const json& v) { return v.is_number() ? v.get<double>() : std::nan(""); };
      std::printf("%-40s %8g %10.3f %8.3f %12.2f %10llu %6llu\n", r["variant"].get<std::string>().c_str(),
                  num(r["noise_level"]), num(r["mse_db"]), num(r["std_db"]), num(r["latency_us_per_step"]),
                  r["param_count"].get<unsigned long long>(), r["seed"].get<unsigned long long>());
    }
  }
  if (result.contains("notes"))
    for (const auto& n : result["notes"]) std::printf("note: %s\n", n.get<std::string>().c_str());
  if (result.contains("metrics_path") && !result["metrics_path"].get<std::string>().empty())
    std::printf("metrics: %s\n", result["metrics_path"].get<std::string>().c_str());
  if (result.contains("plots"))
    for (const auto& p : result["plots"]) std::printf("plot: %s\n", p.get<std::string>().c_str());
}

using JsonCall = lkf_status (*)(const char*, char**);

int run_json(JsonCall fn, const json& cfg) {
  char* out = nullptr;
  const lkf_status s = fn(cfg.dump().c_str(), &out);
  if (s != LKF_OK) return fail(s);
  const json result = json::parse(out);
  lkf_string_free(out);
  if (result.contains("artifacts")) {
    std::printf("%s\n", result.dump(2).c_str());
  } else {
    print_records(result);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space learned Kalman filtering toolkit"};
  app.require_subcommand(1);

  Common gen, train, eval, mismatch, latency;
  auto* g = app.add_subcommand("generate", "generate labeled datasets into --out");
  add_common(g, gen);
  auto* t = app.add_subcommand("train", "train (or load from cache) every requested variant");
  add_common(t, train);
  auto* e = app.add_subcommand("evaluate", "train as needed, evaluate on held-out data, write metrics.csv and a plot");
  add_common(e, eval);
  auto* mm = app.add_subcommand("mismatch", "Taylor-order (--taylor-j < 5) or sampling (--decimate R) mismatch study");
  add_common(mm, mismatch);
  auto* l = app.add_subcommand("latency", "per-step inference latency of the learned pipeline against latent EKFs");
  add_common(l, latency);
  std::size_t lat_traj = 100, lat_len = 200;
  l->add_option("--trajectories", lat_traj, "trajectories timed per variant");
  l->add_option("--length", lat_len, "length of each timed trajectory");
  std::vector<std::string> csvs;
  std::string plot_out = "out";
  auto* p = app.add_subcommand("plot", "render MSE-vs-noise plots from metrics CSV files");
  p->add_option("csv", csvs, "metrics CSV file(s)")->required()->check(CLI::ExistingFile);
  p->add_option("--out", plot_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  auto install_log = [](const Common& c) {
    if (!c.quiet) lkf_set_log_callback([](const char* line, void*) { std::fprintf(stderr, "[latentkf] %s\n", line); }, nullptr);
  };

  if (g->parsed()) {
    install_log(gen);
    json base = to_config(gen);
    std::vector<double> levels = gen.noise_levels;
    if (levels.empty()) levels.push_back(gen.model == "pendulum" ? 23.0 : 2.0);
    std::vector<std::uint64_t> seeds = gen.seeds.empty() ? std::vector<std::uint64_t>{0} : gen.seeds;
    for (double level : levels) {
      for (auto seed : seeds) {
        json cfg = {{"model", gen.model},
                    {"noise_level", level},
                    {"seed", seed},
                    {"count", gen.count ? gen.count : (gen.full_scale ? 1000 : 200)},
                    {"length", gen.t_train ? gen.t_train : (gen.full_scale ? 200 : 100)},
                    {"decimation", gen.decimate ? gen.decimate : 1}};
        lkf_dataset* ds = nullptr;
        if (auto s = lkf_dataset_generate(cfg.dump().c_str(), &ds); s != LKF_OK) return fail(s);
        char name[96];
        std::snprintf(name, sizeof name, "/%s_L%g_s%llu", gen.model.c_str(), level, static_cast<unsigned long long>(seed));
        const std::string dir = gen.out + name;
        const lkf_status s = lkf_dataset_save(ds, dir.c_str());
        lkf_dataset_free(ds);
        if (s != LKF_OK) return fail(s);
        std::printf("dataset: %s\n", dir.c_str());
      }
    }
    return 0;
  }
  if (t->parsed()) {
    install_log(train);
    return run_json(lkf_train, to_config(train));
  }
  if (e->parsed()) {
    install_log(eval);
    return run_json(lkf_evaluate, to_config(eval));
  }
  if (mm->parsed()) {
    install_log(mismatch);
    if (!mismatch.taylor_j && !mismatch.decimate) {
      std::fprintf(stderr, "error: mismatch needs --taylor-j J (J < 5) or --decimate R (R > 1)\n");
      return 2;
    }
    return run_json(lkf_mismatch, to_config(mismatch));
  }
  if (l->parsed()) {
    install_log(latency);
    json cfg = to_config(latency);
    cfg["trajectories"] = lat_traj;
    cfg["length"] = lat_len;
    return run_json(lkf_latency, cfg);
  }
  if (p->parsed()) {
    for (const auto& csv : csvs) {
      char* out = nullptr;
      if (auto s = lkf_plot(csv.c_str(), plot_out.c_str(), &out); s != LKF_OK) return fail(s);
      const json r = json::parse(out);
      lkf_string_free(out);
      for (const auto& w : r["warnings"]) std::fprintf(stderr, "warning: %s\n", w.get<std::string>().c_str());
      for (const auto& f : r["plots"]) std::printf("plot: %s\n", f.get<std::string>().c_str());
    }
    return 0;
  }
  return 0;
}
