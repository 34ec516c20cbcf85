// SPDX-License-Identifier: Apache-2.0
#include "latentkf.h"

#include "latentkf/bench/experiment.hpp"
#include "latentkf/bench/plot.hpp"
#include "latentkf/data.hpp"
#include "latentkf/error.hpp"
#include "latentkf/pipeline.hpp"

#include <json.hpp>

#include <cstring>
#include <mutex>
#include <new>
#include <string>

using nlohmann::json;
namespace lk = latentkf;

struct lkf_dataset {
  lk::data::Dataset ds;
};

struct lkf_pipeline {
  lk::pipeline::LatentKalmanNet net;
};

struct lkf_session {
  lk::pipeline::InferenceSession session;
  std::size_t m, n;
};

namespace {

thread_local std::string g_last_error;
std::mutex g_log_mutex;
lkf_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

lkf_status to_status(lk::ErrorCode c) {
  switch (c) {
    case lk::ErrorCode::kInvalidArgument: return LKF_ERR_INVALID_ARGUMENT;
    case lk::ErrorCode::kInvalidState: return LKF_ERR_INVALID_STATE;
    case lk::ErrorCode::kDoubleBackward: return LKF_ERR_INVALID_STATE;
    case lk::ErrorCode::kShape: return LKF_ERR_SHAPE;
    case lk::ErrorCode::kFormat: return LKF_ERR_FORMAT;
    case lk::ErrorCode::kIo: return LKF_ERR_IO;
    case lk::ErrorCode::kDivergence: return LKF_ERR_DIVERGENCE;
    case lk::ErrorCode::kNumerical: return LKF_ERR_NUMERICAL;
    case lk::ErrorCode::kInternal: return LKF_ERR_INTERNAL;
  }
  return LKF_ERR_INTERNAL;
}

/// Runs `fn`, translating exceptions into status codes and the thread's last error.
template <class Fn>
lkf_status guard(Fn&& fn) {
  try {
    fn();
    return LKF_OK;
  } catch (const lk::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return LKF_ERR_FORMAT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return LKF_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LKF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LKF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return LKF_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw lk::InvalidArgument(what);
}

json parse(const char* text) {
  require(text != nullptr, "config JSON must not be NULL");
  auto j = json::parse(text);
  if (!j.is_object()) throw lk::InvalidArgument("config JSON must be an object");
  return j;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void log_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  if (g_log_fn) g_log_fn(line.c_str(), g_log_user);
}

std::shared_ptr<const lk::models::Dynamics> dynamics_from_json(const json& j) {
  const auto kind = lk::models::model_kind_from_string(j.value("model", std::string("lorenz")));
  if (kind == lk::models::ModelKind::kPendulum) return std::make_shared<lk::models::PendulumDynamics>();
  lk::models::LorenzConfig cfg;
  cfg.taylor_order = j.value("taylor_j", 5);
  cfg.validate();
  return std::make_shared<lk::models::LorenzDynamics>(cfg);
}

lk::bench::ExperimentConfig experiment_from_json(const json& j) {
  const auto kind = lk::models::model_kind_from_string(j.value("model", std::string("lorenz")));
  auto cfg = j.value("full_scale", false) ? lk::bench::ExperimentConfig::full_scale(kind) : lk::bench::ExperimentConfig::desk(kind);
  if (j.contains("noise_levels")) cfg.noise_levels = j.at("noise_levels").get<std::vector<double>>();
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& v : j.at("variants")) cfg.variants.push_back(lk::bench::variant_from_string(v.get<std::string>()));
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.count = j.value("count", cfg.count);
  cfg.test_count = j.value("test_count", cfg.test_count);
  cfg.t_train = j.value("t_train", cfg.t_train);
  cfg.t_test = j.value("t_test", cfg.t_test);
  cfg.taylor_j_filter = j.value("taylor_j", cfg.taylor_j_filter);
  cfg.decimation = j.value("decimate", cfg.decimation);
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("cache_dir")) cfg.cache_dir = j.at("cache_dir").get<std::string>();
  if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
  cfg.schedule.epochs = j.value("epochs", cfg.schedule.epochs);
  cfg.schedule.warm_start.epochs = j.value("warm_epochs", cfg.schedule.warm_start.epochs);
  cfg.encoder_optimizer.epochs = j.value("encoder_epochs", cfg.encoder_optimizer.epochs);
  if (j.contains("optimizer")) cfg.schedule.optimizer = lk::ad::optimizer_kind_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("q2_grid")) cfg.q2_grid = j.at("q2_grid").get<std::vector<double>>();
  cfg.log = log_line;
  cfg.validate();
  return cfg;
}

json result_to_json(const lk::bench::ExperimentResult& r) {
  json records = json::array();
  for (const auto& x : r.records) {
    records.push_back({{"variant", x.variant},
                       {"noise_level", x.noise_level},
                       {"mse_db", x.mse_db},
                       {"std_db", x.std_db},
                       {"latency_us_per_step", x.latency_us_per_step},
                       {"param_count", x.param_count},
                       {"op_count", x.op_count},
                       {"seed", x.seed},
                       {"config_hash", x.config_hash}});
  }
  json diags = json::array();
  for (const auto& d : r.diagnostics) {
    diags.push_back({{"variant", d.variant},
                     {"noise_level", d.noise_level},
                     {"seed", d.seed},
                     {"mse", d.mse},
                     {"unwrapped_mse", d.unwrapped_mse},
                     {"q2", d.q2},
                     {"hidden_norm_max", d.hidden_norm_max},
                     {"hidden_norm_final_mean", d.hidden_norm_final_mean},
                     {"diverged", d.diverged}});
  }
  json plots = json::array();
  for (const auto& p : r.plots) plots.push_back(p.string());
  return {{"records", records}, {"diagnostics", diags}, {"notes", r.notes}, {"metrics_path", r.metrics_path.string()}, {"plots", plots}};
}

template <class Fn>
lkf_status json_call(const char* config_json, char** result_json, Fn&& fn) {
  return guard([&] {
    require(result_json != nullptr, "result_json must not be NULL");
    *result_json = nullptr;
    const json out = fn(parse(config_json));
    *result_json = dup_string(out.dump(2));
  });
}

}  // namespace

extern "C" {

const char* lkf_version(void) { return "0.1.0"; }

const char* lkf_status_string(lkf_status status) {
  switch (status) {
    case LKF_OK: return "ok";
    case LKF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case LKF_ERR_INVALID_STATE: return "invalid state";
    case LKF_ERR_SHAPE: return "shape mismatch";
    case LKF_ERR_FORMAT: return "format error";
    case LKF_ERR_IO: return "I/O error";
    case LKF_ERR_DIVERGENCE: return "training diverged";
    case LKF_ERR_NUMERICAL: return "numerical error";
    case LKF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* lkf_last_error(void) { return g_last_error.c_str(); }

void lkf_string_free(char* s) { std::free(s); }

void lkf_set_log_callback(lkf_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

// -- datasets ----------------------------------------------------------------------------------------

lkf_status lkf_dataset_generate(const char* config_json, lkf_dataset** out) {
  return guard([&] {
    require(out != nullptr, "out must not be NULL");
    *out = nullptr;
    const json j = parse(config_json);
    lk::bench::ExperimentConfig cfg = lk::bench::ExperimentConfig::desk(
        lk::models::model_kind_from_string(j.value("model", std::string("lorenz"))));
    cfg.count = j.value("count", cfg.count);
    cfg.t_train = j.value("length", cfg.t_train);
    cfg.decimation = j.value("decimation", std::size_t{1});
    cfg.taylor_j_true = j.value("taylor_j", 5);
    cfg.validate();
    auto ds = lk::bench::make_training_data(cfg, j.value("noise_level", cfg.noise_levels.front()), j.value("seed", std::uint64_t{0}));
    *out = new lkf_dataset{std::move(ds)};
  });
}

lkf_status lkf_dataset_load(const char* dir, lkf_dataset** out) {
  return guard([&] {
    require(dir != nullptr && out != nullptr, "dir and out must not be NULL");
    *out = nullptr;
    *out = new lkf_dataset{lk::data::load_dataset(dir)};
  });
}

lkf_status lkf_dataset_save(const lkf_dataset* ds, const char* dir) {
  return guard([&] {
    require(ds != nullptr && dir != nullptr, "dataset and dir must not be NULL");
    lk::data::save_dataset(ds->ds, dir);
  });
}

lkf_status lkf_dataset_info(const lkf_dataset* ds, size_t* count, size_t* length, size_t* state_dim, size_t* frame_size) {
  return guard([&] {
    require(ds != nullptr, "dataset must not be NULL");
    if (count) *count = ds->ds.count();
    if (length) *length = ds->ds.length();
    if (state_dim) *state_dim = ds->ds.state_dim();
    if (frame_size) *frame_size = ds->ds.frame_size();
  });
}

lkf_status lkf_dataset_state(const lkf_dataset* ds, size_t d, size_t t, double* out, size_t out_len) {
  return guard([&] {
    require(ds != nullptr && out != nullptr, "dataset and out must not be NULL");
    if (out_len < ds->ds.state_dim()) throw lk::ShapeError("output buffer shorter than the state dimension");
    if (d >= ds->ds.count() || t >= ds->ds.length()) throw lk::InvalidArgument("trajectory or step index out of range");
    auto x = ds->ds.state_span(d, t);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
  });
}

lkf_status lkf_dataset_frame(const lkf_dataset* ds, size_t d, size_t t, float* out, size_t out_len) {
  return guard([&] {
    require(ds != nullptr && out != nullptr, "dataset and out must not be NULL");
    if (out_len < ds->ds.frame_size()) throw lk::ShapeError("output buffer shorter than the frame size");
    if (d >= ds->ds.count() || t >= ds->ds.length()) throw lk::InvalidArgument("trajectory or step index out of range");
    auto y = ds->ds.frame_span(d, t);
    std::memcpy(out, y.data(), y.size() * sizeof(float));
  });
}

void lkf_dataset_free(lkf_dataset* ds) { delete ds; }

// -- pipelines ---------------------------------------------------------------------------------------------

lkf_status lkf_pipeline_load(const char* dir, const char* model_json, lkf_pipeline** out) {
  return guard([&] {
    require(dir != nullptr && out != nullptr, "dir and out must not be NULL");
    *out = nullptr;
    const json j = model_json ? parse(model_json) : json::object();
    *out = new lkf_pipeline{lk::pipeline::load_pipeline(dir, dynamics_from_json(j))};
  });
}

lkf_status lkf_pipeline_dims(const lkf_pipeline* p, size_t* state_dim, size_t* latent_dim, size_t* frame_size) {
  return guard([&] {
    require(p != nullptr, "pipeline must not be NULL");
    const auto& a = p->net.encoder().arch();
    if (state_dim) *state_dim = a.m;
    if (latent_dim) *latent_dim = a.p;
    if (frame_size) *frame_size = a.height * a.width;
  });
}

lkf_status lkf_pipeline_param_count(const lkf_pipeline* p, size_t* count) {
  return guard([&] {
    require(p != nullptr && count != nullptr, "pipeline and count must not be NULL");
    *count = p->net.encoder().parameter_count() + p->net.gain_params().parameter_count();
  });
}

lkf_status lkf_pipeline_infer(const lkf_pipeline* p, const lkf_dataset* ds, size_t d, const double* x0, double* out,
                              size_t out_len) {
  return guard([&] {
    require(p != nullptr && ds != nullptr && x0 != nullptr && out != nullptr, "arguments must not be NULL");
    const std::size_t m = p->net.encoder().arch().m;
    if (ds->ds.state_dim() != m) throw lk::ShapeError("dataset state dimension does not match the pipeline");
    if (out_len < ds->ds.length() * m) throw lk::ShapeError("output buffer shorter than length * state_dim");
    if (d >= ds->ds.count()) throw lk::InvalidArgument("trajectory index out of range");
    lk::pipeline::InferenceSession session(p->net);
    const auto est = session.run(ds->ds, d, Eigen::Map<const Eigen::VectorXd>(x0, static_cast<Eigen::Index>(m)));
    for (std::size_t t = 0; t < est.size(); ++t)
      for (std::size_t i = 0; i < m; ++i) out[t * m + i] = est[t](static_cast<Eigen::Index>(i));
  });
}

void lkf_pipeline_free(lkf_pipeline* p) { delete p; }

lkf_status lkf_session_create(const lkf_pipeline* p, lkf_session** out) {
  return guard([&] {
    require(p != nullptr && out != nullptr, "pipeline and out must not be NULL");
    *out = nullptr;
    const auto& a = p->net.encoder().arch();
    *out = new lkf_session{lk::pipeline::InferenceSession(p->net), a.m, a.height * a.width};
  });
}

lkf_status lkf_session_reset(lkf_session* s, const double* x0, size_t m) {
  return guard([&] {
    require(s != nullptr && x0 != nullptr, "session and x0 must not be NULL");
    if (m != s->m) throw lk::ShapeError("x0 length does not match the state dimension");
    s->session.reset(Eigen::Map<const Eigen::VectorXd>(x0, static_cast<Eigen::Index>(m)));
  });
}

lkf_status lkf_session_step(lkf_session* s, const float* frame, size_t n, double* x_out, size_t m) {
  return guard([&] {
    require(s != nullptr && frame != nullptr && x_out != nullptr, "arguments must not be NULL");
    if (n != s->n) throw lk::ShapeError("frame length does not match the encoder input");
    if (m < s->m) throw lk::ShapeError("output buffer shorter than the state dimension");
    const auto& x = s->session.step(std::span<const float>(frame, n));
    for (std::size_t i = 0; i < s->m; ++i) x_out[i] = x(static_cast<Eigen::Index>(i));
  });
}

void lkf_session_free(lkf_session* s) { delete s; }

// -- experiments -------------------------------------------------------------------------------------------

lkf_status lkf_train(const char* config_json, char** result_json) {
  return json_call(config_json, result_json, [](const json& j) {
    const auto cfg = experiment_from_json(j);
    json arts = json::array();
    for (double level : cfg.noise_levels) {
      for (auto seed : cfg.seeds) {
        auto a = lk::bench::prepare_artifacts(cfg, level, seed, cfg.variants);
        json entry = {{"noise_level", level},
                      {"seed", seed},
                      {"encoder_dir", a.encoder_dir.string()},
                      {"has_plain_encoder", a.plain.has_value()},
                      {"has_warm_encoder", a.warm.has_value()},
                      {"notes", a.notes}};
        if (a.lkn) {
          entry["pipeline_dir"] = a.pipeline_dir.string();
          entry["diverged"] = a.log.diverged;
          entry["selected_epoch"] = a.log.selected_epoch;
          // Export a copy of the combined checkpoint next to the other outputs.
          char tag[64];
          std::snprintf(tag, sizeof tag, "_L%g_s%llu", level, static_cast<unsigned long long>(seed));
          const auto dst = cfg.out_dir / (lk::models::to_string(cfg.model) + tag);
          std::filesystem::create_directories(dst);
          std::filesystem::copy(a.pipeline_dir, dst,
                                std::filesystem::copy_options::recursive | std::filesystem::copy_options::overwrite_existing);
          entry["checkpoint"] = dst.string();
        }
        arts.push_back(entry);
      }
    }
    return json{{"artifacts", arts}};
  });
}

lkf_status lkf_evaluate(const char* config_json, char** result_json) {
  return json_call(config_json, result_json,
                   [](const json& j) { return result_to_json(lk::bench::run_experiment(experiment_from_json(j))); });
}

lkf_status lkf_mismatch(const char* config_json, char** result_json) {
  return json_call(config_json, result_json, [](const json& j) {
    const auto cfg = experiment_from_json(j);
    const auto kind = cfg.taylor_j_filter < cfg.taylor_j_true ? lk::bench::MismatchKind::kTaylor : lk::bench::MismatchKind::kDecimation;
    return result_to_json(lk::bench::run_mismatch(kind, cfg));
  });
}

lkf_status lkf_latency(const char* config_json, char** result_json) {
  return json_call(config_json, result_json, [](const json& j) {
    lk::bench::LatencyOptions opt;
    opt.trajectories = j.value("trajectories", opt.trajectories);
    opt.length = j.value("length", opt.length);
    opt.repeats = j.value("repeats", opt.repeats);
    return result_to_json(lk::bench::run_latency(experiment_from_json(j), opt));
  });
}

lkf_status lkf_plot(const char* csv_path, const char* out_dir, char** result_json) {
  return guard([&] {
    require(csv_path != nullptr && out_dir != nullptr && result_json != nullptr, "arguments must not be NULL");
    *result_json = nullptr;
    std::vector<std::string> warnings;
    const auto files = lk::bench::plot_metrics_file(csv_path, out_dir, &warnings);
    json written = json::array();
    for (const auto& f : files) written.push_back(f.string());
    *result_json = dup_string(json{{"plots", written}, {"warnings", warnings}}.dump(2));
  });
}

}  // extern "C"
