// SPDX-License-Identifier: Apache-2.0
#include "latentkf/bench/experiment.hpp"

#include "latentkf/autodiff/checkpoint.hpp"
#include "latentkf/bench/plot.hpp"
#include "latentkf/error.hpp"
#include "latentkf/filters.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>

#if defined(__linux__)
#include <sched.h>
#endif

namespace latentkf::bench {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kCacheFormat = 1;

void note(const ExperimentConfig& cfg, const std::string& line) {
  if (cfg.log) cfg.log(line);
}

std::string level_str(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", level);
  return buf;
}

json optimizer_json(const ad::OptimizerConfig& o) {
  return {{"kind", ad::to_string(o.kind)},
          {"learning_rate", o.learning_rate},
          {"weight_decay", o.weight_decay},
          {"batch_size", o.batch_size},
          {"epochs", o.epochs}};
}

json data_json(const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  return {{"cache_format", kCacheFormat},
          {"model", models::to_string(cfg.model)},
          {"noise_level", level},
          {"seed", seed},
          {"count", cfg.count},
          {"t_train", cfg.t_train},
          {"taylor_j_true", cfg.taylor_j_true},
          {"decimation", cfg.decimation}};
}

json encoder_json(const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  return {{"data", data_json(cfg, level, seed)},
          {"plain", optimizer_json(cfg.encoder_optimizer)},
          {"warm", optimizer_json(cfg.schedule.warm_start)},
          {"prior_sigma", cfg.schedule.prior_sigma}};
}

json lkn_json(const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  return {{"encoders", encoder_json(cfg, level, seed)},
          {"taylor_j_filter", cfg.taylor_j_filter},
          {"schedule", cfg.schedule.to_json()}};
}

std::vector<double> q2_grid(const ExperimentConfig& cfg) {
  return cfg.q2_grid.empty() ? filters::default_q2_grid() : cfg.q2_grid;
}

bool needs(const std::vector<Variant>& vs, Variant v) { return std::find(vs.begin(), vs.end(), v) != vs.end(); }

std::vector<models::StateVector> initial_estimates(const data::Dataset& ds, std::uint64_t seed) {
  models::Rng rng(seed ^ 0x1E57E571ULL);
  std::vector<models::StateVector> out;
  for (std::size_t d = 0; d < ds.count(); ++d) out.push_back(filters::initial_estimate(ds.state(d, 0), rng));
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw FormatError("empty matrix in cache metadata");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw FormatError("ragged matrix in cache metadata");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

/// Latent EKF over one trajectory with a prior-fed encoder supplying z_t.
std::vector<models::StateVector> run_latent_ekf(const models::Dynamics& f, const models::SelectionMatrix& sel,
                                                encoders::EncoderInference& enc, const data::Dataset& ds, std::size_t d,
                                                const models::StateVector& x0, const filters::LatentEkfConfig& ekf) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(sel.rows()));
  auto features = [&](std::size_t t, const models::StateVector& prior) -> Eigen::VectorXd {
    enc.run(ds.frame_span(d, t).data(), prior.data(), z.data());
    return z;
  };
  return filters::latent_ekf_run(f, sel, x0, ds.length(), features, ekf);
}

/// x_t = x_{t|t-1} + P^T (z_t - P x_{t|t-1}), periodic entries on the branch nearest the prediction.
std::vector<models::StateVector> run_encoder_prior(const models::Dynamics& f, const models::SelectionMatrix& sel,
                                                   encoders::EncoderInference& enc, const data::Dataset& ds,
                                                   std::size_t d, const models::StateVector& x0) {
  std::vector<models::StateVector> out{x0};
  Eigen::VectorXd z(static_cast<Eigen::Index>(sel.rows()));
  models::StateVector x = x0;
  const auto periods = f.periods();
  for (std::size_t t = 1; t < ds.length(); ++t) {
    models::StateVector prior = f.evolve(x);
    enc.run(ds.frame_span(d, t).data(), prior.data(), z.data());
    for (std::size_t i = 0; i < sel.rows(); ++i) {
      const std::size_t j = sel.indices()[i];
      auto& xj = prior(static_cast<Eigen::Index>(j));
      xj = models::wrap_near(z(static_cast<Eigen::Index>(i)), xj, periods[j]);
    }
    x = prior;
    out.push_back(x);
  }
  return out;
}

/// Scores steps 1..T-1 of one trajectory into each accumulator.
void score(const data::Dataset& ds, std::size_t d, const std::vector<models::StateVector>& est, ErrorAccumulator& acc,
           ErrorAccumulator* also = nullptr) {
  for (ErrorAccumulator* a : {&acc, also}) {
    if (!a) continue;
    a->begin_trajectory();
    for (std::size_t t = 1; t < est.size(); ++t) a->add(est[t], ds.state_span(d, t));
    a->end_trajectory();
  }
}

double tune_ekf_q2(const ExperimentConfig& cfg, const models::SSModelSpec& fspec, const encoders::Encoder& warm,
                   const Eigen::MatrixXd& r_hat, const data::Dataset& ds, const std::vector<std::size_t>& val,
                   std::uint64_t seed) {
  encoders::EncoderInference enc(warm);
  const auto x0s = initial_estimates(ds, seed ^ 0xBA11ULL);
  const auto comps = metric_components(cfg.model);
  return filters::tune_q2(q2_grid(cfg), [&](double q2) {
    ErrorAccumulator acc(comps, fspec.dynamics->periods());
    filters::LatentEkfConfig ekf{q2, r_hat};
    for (std::size_t d : val) score(ds, d, run_latent_ekf(*fspec.dynamics, fspec.selection, enc, ds, d, x0s[d], ekf), acc);
    const double mse = acc.mse();
    return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
  });
}

std::uint64_t count_params(const encoders::Encoder& e) { return e.parameter_count(); }

}  // namespace

// -- names -----------------------------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kEncoder: return "encoder";
    case Variant::kEncoderPrior: return "encoder+prior";
    case Variant::kEncoderPriorEkf: return "encoder+prior+ekf";
    case Variant::kLatentKalmanNet: return "latent-kalmannet";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : all_variants())
    if (to_string(v) == name) return v;
  throw InvalidArgument("unknown variant '" + name + "' (expected encoder|encoder+prior|encoder+prior+ekf|latent-kalmannet)");
}

std::vector<Variant> all_variants() {
  return {Variant::kEncoder, Variant::kEncoderPrior, Variant::kEncoderPriorEkf, Variant::kLatentKalmanNet};
}

// -- configuration ---------------------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::desk(models::ModelKind model) {
  ExperimentConfig c;
  c.model = model;
  c.count = 200;
  c.t_train = 100;
  c.t_test = 100;
  c.test_count = 100;
  c.noise_levels = model == models::ModelKind::kPendulum ? std::vector<double>{15.2, 23.0} : std::vector<double>{2.0, 3.0};
  c.encoder_optimizer = {ad::OptimizerKind::kSgd, 0.05, 1e-5, 32, 10};
  c.schedule.warm_start = c.encoder_optimizer;
  c.schedule.epochs = 16;
  c.schedule.batch_size = 8;
  c.schedule.gain_learning_rate = 1e-2;
  c.schedule.encoder_learning_rate = 1e-4;
  c.schedule.metric_components = metric_components(model);
  return c;
}

ExperimentConfig ExperimentConfig::full_scale(models::ModelKind model) {
  ExperimentConfig c = desk(model);
  c.count = 1000;
  c.t_train = 200;
  c.t_test = 200;
  c.noise_levels = model == models::ModelKind::kPendulum ? std::vector<double>{6.0, 15.2, 23.0, 30.0}
                                                         : std::vector<double>{0.3, 1.0, 2.0, 3.0};
  c.encoder_optimizer.epochs = 20;
  c.schedule.warm_start.epochs = 20;
  c.schedule.epochs = 30;
  return c;
}

void ExperimentConfig::validate() const {
  if (noise_levels.empty()) throw InvalidArgument("experiment: at least one noise level is required");
  if (variants.empty()) throw InvalidArgument("experiment: at least one variant is required");
  if (seeds.empty()) throw InvalidArgument("experiment: at least one seed is required");
  if (count < 10) throw InvalidArgument("experiment: need at least 10 trajectories for 80/10/10 splits");
  if (t_train < 2 || t_test < 2) throw InvalidArgument("experiment: trajectories need at least two samples");
  if (taylor_j_true < 1 || taylor_j_filter < 1) throw InvalidArgument("experiment: Taylor orders must be >= 1");
  if (decimation == 0) throw InvalidArgument("experiment: decimation ratio must be >= 1");
  encoder_optimizer.validate();
  schedule.validate();
  for (double q : q2_grid)
    if (!(q > 0.0)) throw InvalidArgument("experiment: q2 grid entries must be positive");
}

json ExperimentConfig::to_json() const {
  json vs = json::array();
  for (Variant v : variants) vs.push_back(to_string(v));
  return {{"model", models::to_string(model)},
          {"noise_levels", noise_levels},
          {"variants", vs},
          {"count", count},
          {"test_count", test_count},
          {"t_train", t_train},
          {"t_test", t_test},
          {"taylor_j_true", taylor_j_true},
          {"taylor_j_filter", taylor_j_filter},
          {"decimation", decimation},
          {"seeds", seeds},
          {"encoder_optimizer", optimizer_json(encoder_optimizer)},
          {"schedule", schedule.to_json()},
          {"q2_grid", q2_grid}};
}

std::string config_hash(const json& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path resolve_cache_dir(const ExperimentConfig& cfg) {
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  if (const char* env = std::getenv("LATENTKF_CACHE"); env && *env) return fs::path(env);
  return cfg.out_dir / "cache";
}

std::vector<std::size_t> metric_components(models::ModelKind model) {
  return model == models::ModelKind::kPendulum ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, 1, 2};
}

models::SSModelSpec data_spec(const ExperimentConfig& cfg, double level) {
  const auto noise = models::noise_for_level(cfg.model, level);
  const double ratio = static_cast<double>(cfg.decimation);
  if (cfg.model == models::ModelKind::kPendulum) {
    auto spec = models::make_pendulum_spec(noise);
    if (cfg.decimation > 1) spec = models::with_dynamics(spec, std::make_shared<models::PendulumDynamics>(models::kPendulumDt / ratio));
    return spec;
  }
  models::LorenzConfig lc;
  lc.taylor_order = cfg.taylor_j_true;
  lc.dt = lc.dt / ratio;
  return models::make_lorenz_spec(noise, lc);
}

models::SSModelSpec filter_spec(const ExperimentConfig& cfg, double level) {
  const auto noise = models::noise_for_level(cfg.model, level);
  if (cfg.model == models::ModelKind::kPendulum) return models::make_pendulum_spec(noise);
  models::LorenzConfig lc;
  lc.taylor_order = cfg.taylor_j_filter;
  return models::make_lorenz_spec(noise, lc);
}

data::Dataset make_training_data(const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  const auto spec = data_spec(cfg, level);
  return data::generate_decimated(spec, cfg.decimation, cfg.count, cfg.t_train, data::InitialStateRule::for_model(cfg.model), seed);
}

data::Dataset make_test_data(const ExperimentConfig& cfg, double level, std::uint64_t seed, std::size_t count,
                             std::size_t length) {
  const auto spec = data_spec(cfg, level);
  data::SplitSizes all_test{0, 0, count};
  return data::generate_decimated(spec, cfg.decimation, count, length, data::InitialStateRule::for_model(cfg.model),
                                  seed ^ 0x7E577E57ULL, all_test);
}

// -- training with cache ---------------------------------------------------------------------------------

TrainedArtifacts prepare_artifacts(const ExperimentConfig& cfg, double level, std::uint64_t seed,
                                   const std::vector<Variant>& variants, bool train_missing) {
  cfg.validate();
  TrainedArtifacts out;
  const fs::path cache = resolve_cache_dir(cfg);
  const fs::path enc_dir = cache / ("enc-" + config_hash(encoder_json(cfg, level, seed)));
  const fs::path lkn_dir = cache / ("lkn-" + config_hash(lkn_json(cfg, level, seed)));
  out.encoder_dir = enc_dir;
  out.pipeline_dir = lkn_dir;
  const bool want_lkn = needs(variants, Variant::kLatentKalmanNet);
  const bool want_warm = want_lkn || needs(variants, Variant::kEncoderPrior) || needs(variants, Variant::kEncoderPriorEkf);
  // The prior-fed encoder starts from the prior-free one.
  const bool want_plain = needs(variants, Variant::kEncoder) ||
                          (want_warm && train_missing && !fs::exists(enc_dir / "warm" / "manifest.json"));
  const auto dspec = data_spec(cfg, level);
  const auto fspec = filter_spec(cfg, level);
  const std::string tag = models::to_string(cfg.model) + " level " + level_str(level) + " seed " + std::to_string(seed);

  std::optional<data::Dataset> ds;
  data::SplitIndices splits;
  auto dataset = [&]() -> const data::Dataset& {
    if (!ds) {
      ds = make_training_data(cfg, level, seed);
      splits = ds->splits();
    }
    return *ds;
  };

  if (want_plain) {
    if (fs::exists(enc_dir / "plain" / "manifest.json")) {
      out.plain = pipeline::load_encoder(enc_dir / "plain");
    } else if (train_missing) {
      note(cfg, tag + ": training encoder");
      encoders::EncoderTrainConfig ec;
      ec.optimizer = cfg.encoder_optimizer;
      ec.prior_mode = encoders::PriorMode::kNone;
      ec.seed = seed + 1;
      ec.on_epoch = [&](std::size_t e, double l) { note(cfg, tag + ": encoder epoch " + std::to_string(e) + " loss " + std::to_string(l)); };
      const auto& d = dataset();
      auto res = encoders::train_encoder(d, splits.train, splits.validation, dspec.selection,
                                         encoders::EncoderArch::for_model(dspec, false), ec);
      pipeline::save_encoder(res.encoder, enc_dir / "plain", {{"validation_mse", res.validation_mse}});
      out.plain = std::move(res.encoder);
    }
  }

  if (want_warm) {
    if (fs::exists(enc_dir / "warm" / "manifest.json")) {
      json extra;
      out.warm = pipeline::load_encoder(enc_dir / "warm", &extra);
      out.r_hat = matrix_from_json(extra.at("r_hat"));
    } else if (train_missing) {
      note(cfg, tag + ": warm-starting prior-fed encoder");
      auto sched = cfg.schedule;
      sched.seed = seed + 2;
      const auto& d = dataset();
      encoders::EncoderTrainConfig ec;
      ec.optimizer = sched.warm_start;
      ec.prior_mode = encoders::PriorMode::kNoisyGroundTruth;
      ec.prior_sigma = sched.prior_sigma > 0.0 ? sched.prior_sigma : 3.0 * std::sqrt(dspec.q2);
      ec.seed = sched.seed;
      ec.on_epoch = [&](std::size_t e, double l) { note(cfg, tag + ": warm-start epoch " + std::to_string(e) + " loss " + std::to_string(l)); };
      auto res = encoders::train_encoder(d, splits.train, splits.validation, dspec.selection,
                                         encoders::EncoderArch::for_model(dspec, true), ec,
                                         out.plain ? &*out.plain : nullptr);
      pipeline::save_encoder(res.encoder, enc_dir / "warm",
                             {{"validation_mse", res.validation_mse}, {"r_hat", matrix_json(res.residual_covariance)}});
      out.warm = std::move(res.encoder);
      out.r_hat = res.residual_covariance;
    }
  }

  if (want_lkn && out.warm) {
    if (fs::exists(lkn_dir / "schedule.json")) {
      json record;
      out.lkn = pipeline::load_pipeline(lkn_dir, fspec.dynamics, &record);
      if (record.contains("extra") && record["extra"].contains("log")) {
        const auto& l = record["extra"]["log"];
        out.log.diverged = l.value("diverged", false);
        out.log.divergence_reason = l.value("divergence_reason", "");
        out.log.selected_epoch = l.value("selected_epoch", std::size_t{0});
      }
    } else if (train_missing) {
      note(cfg, tag + ": alternating training (J_filter=" + std::to_string(cfg.taylor_j_filter) + ")");
      auto sched = cfg.schedule;
      sched.seed = seed + 3;
      if (sched.metric_components.empty()) sched.metric_components = metric_components(cfg.model);
      auto net = pipeline::assemble(fspec.dynamics, fspec.selection, *out.warm, sched);
      out.log = pipeline::train_alternating(net, dataset(), splits, sched, [&](const pipeline::EpochRecord& r) {
        note(cfg, tag + ": epoch " + std::to_string(r.epoch) + " gain-pass " + std::to_string(r.gain_pass_loss) +
                      " encoder-pass " + std::to_string(r.encoder_pass_loss) + " val " +
                      std::to_string(bench::to_db(r.validation_mse)) + " dB");
      });
      if (out.log.diverged) out.notes.push_back(tag + ": " + out.log.divergence_reason);
      pipeline::save_pipeline(net, sched, {{"log", out.log.to_json()}}, lkn_dir);
      out.lkn = std::move(net);
    }
  }
  return out;
}

// -- evaluation --------------------------------------------------------------------------------------------

double ExperimentResult::median_db(const std::string& variant, double level) const {
  std::vector<double> v;
  for (const auto& r : records)
    if (r.variant == variant && std::abs(r.noise_level - level) < 1e-9) v.push_back(r.mse_db);
  if (v.empty()) throw InvalidArgument("no rows for variant '" + variant + "' at level " + level_str(level));
  return median(v);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  const std::string hash = config_hash(cfg.to_json());
  const auto comps = metric_components(cfg.model);
  for (double level : cfg.noise_levels) {
    const auto fspec = filter_spec(cfg, level);
    for (std::uint64_t seed : cfg.seeds) {
      auto art = prepare_artifacts(cfg, level, seed, cfg.variants);
      for (auto& n : art.notes) result.notes.push_back(n);
      const std::size_t n_test = cfg.test_count ? cfg.test_count : std::max<std::size_t>(cfg.count / 10, 1);
      const auto test = make_test_data(cfg, level, seed, n_test, cfg.t_test);
      const auto x0s = initial_estimates(test, seed);
      std::optional<double> q2;
      if (needs(cfg.variants, Variant::kEncoderPriorEkf)) {
        const auto train = make_training_data(cfg, level, seed);
        const auto sp = train.splits();
        q2 = tune_ekf_q2(cfg, fspec, *art.warm, art.r_hat, train, sp.validation.empty() ? sp.train : sp.validation, seed);
        note(cfg, "level " + level_str(level) + " seed " + std::to_string(seed) + ": tuned q2 = " + level_str(*q2));
      }
      for (Variant v : cfg.variants) {
        ErrorAccumulator acc(comps, fspec.dynamics->periods());
        ErrorAccumulator unwrapped(comps);
        VariantDiagnostics diag;
        diag.variant = to_string(v) + cfg.variant_suffix;
        diag.noise_level = level;
        diag.seed = seed;
        MetricRecord rec;
        rec.variant = diag.variant;
        rec.noise_level = level;
        rec.seed = seed;
        rec.config_hash = hash;
        std::size_t steps = 0;
        const auto t0 = Clock::now();
        switch (v) {
          case Variant::kEncoder: {
            encoders::EncoderInference enc(*art.plain);
            Eigen::VectorXd z(static_cast<Eigen::Index>(fspec.p()));
            for (std::size_t d = 0; d < test.count(); ++d) {
              std::vector<models::StateVector> est{x0s[d]};
              for (std::size_t t = 1; t < test.length(); ++t) {
                enc.run(test.frame_span(d, t).data(), nullptr, z.data());
                models::StateVector x = models::StateVector::Zero(static_cast<Eigen::Index>(fspec.m()));
                for (std::size_t i = 0; i < fspec.p(); ++i) x(static_cast<Eigen::Index>(fspec.selection.indices()[i])) = z(static_cast<Eigen::Index>(i));
                est.push_back(x);
              }
              steps += test.length() - 1;
              score(test, d, est, acc, &unwrapped);
            }
            rec.param_count = count_params(*art.plain);
            rec.op_count = encoder_macs(art.plain->arch());
            break;
          }
          case Variant::kEncoderPrior: {
            encoders::EncoderInference enc(*art.warm);
            for (std::size_t d = 0; d < test.count(); ++d) {
              score(test, d, run_encoder_prior(*fspec.dynamics, fspec.selection, enc, test, d, x0s[d]), acc, &unwrapped);
              steps += test.length() - 1;
            }
            rec.param_count = count_params(*art.warm);
            rec.op_count = encoder_macs(art.warm->arch());
            break;
          }
          case Variant::kEncoderPriorEkf: {
            encoders::EncoderInference enc(*art.warm);
            filters::LatentEkfConfig ekf{*q2, art.r_hat};
            for (std::size_t d = 0; d < test.count(); ++d) {
              score(test, d, run_latent_ekf(*fspec.dynamics, fspec.selection, enc, test, d, x0s[d], ekf), acc, &unwrapped);
              steps += test.length() - 1;
            }
            diag.q2 = *q2;
            rec.param_count = count_params(*art.warm);
            rec.op_count = encoder_macs(art.warm->arch()) + ekf_macs(fspec.m(), fspec.p());
            break;
          }
          case Variant::kLatentKalmanNet: {
            pipeline::InferenceSession session(*art.lkn);
            double final_sum = 0.0;
            for (std::size_t d = 0; d < test.count(); ++d) {
              std::vector<models::StateVector> est{x0s[d]};
              session.reset(x0s[d]);
              for (std::size_t t = 1; t < test.length(); ++t) {
                est.push_back(session.step(test.frame_span(d, t)));
                diag.hidden_norm_max = std::max(diag.hidden_norm_max, session.hidden_norm());
              }
              final_sum += session.hidden_norm();
              steps += test.length() - 1;
              score(test, d, est, acc, &unwrapped);
            }
            diag.hidden_norm_final_mean = final_sum / static_cast<double>(test.count());
            diag.diverged = art.log.diverged;
            rec.param_count = count_params(art.lkn->encoder()) + art.lkn->gain_params().parameter_count();
            rec.op_count = encoder_macs(art.lkn->encoder().arch()) + gain_net_macs(art.lkn->gain_arch()) + fspec.m() * fspec.p();
            break;
          }
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        rec.latency_us_per_step = 1e6 * secs / static_cast<double>(std::max<std::size_t>(steps, 1));
        diag.mse = acc.mse();
        diag.unwrapped_mse = unwrapped.mse();
        rec.mse_db = acc.mse_db();
        rec.std_db = acc.std_db();
        note(cfg, rec.variant + " level " + level_str(level) + " seed " + std::to_string(seed) + ": " +
                      std::to_string(rec.mse_db) + " dB (std " + std::to_string(rec.std_db) + ", unwrapped " +
                      std::to_string(to_db(diag.unwrapped_mse)) + " dB)");
        result.records.push_back(rec);
        result.diagnostics.push_back(diag);
      }
    }
  }
  if (cfg.write_outputs) {
    fs::create_directories(cfg.out_dir);
    result.metrics_path = cfg.out_dir / (cfg.name + ".csv");
    write_metrics_csv(result.metrics_path, result.records);
    std::vector<std::string> warnings;
    PlotOptions po;
    po.title = cfg.plot_title;
    po.x_label = cfg.model == models::ModelKind::kPendulum ? "noise level -10 log10(r^2)" : "noise level -log10(p_r)";
    result.plots = plot_metrics_file(result.metrics_path, cfg.out_dir, &warnings, po);
    for (auto& w : warnings) result.notes.push_back(w);
  }
  return result;
}

ExperimentResult run_mismatch(MismatchKind kind, const ExperimentConfig& cfg) {
  cfg.validate();
  if (kind == MismatchKind::kDecimation) {
    if (cfg.decimation < 2) throw InvalidArgument("decimation mismatch needs a ratio of at least 2");
    auto c = cfg;
    if (c.name == "metrics") c.name = "mismatch_decimation";
    c.plot_title = "Decimation mismatch (ratio " + std::to_string(cfg.decimation) + ")";
    return run_experiment(c);
  }
  if (cfg.model != models::ModelKind::kLorenz) throw InvalidArgument("Taylor mismatch applies to the Lorenz model");
  if (cfg.taylor_j_filter >= cfg.taylor_j_true) throw InvalidArgument("Taylor mismatch needs J_filter < J_true");
  ExperimentResult merged;
  for (int j : {cfg.taylor_j_filter, cfg.taylor_j_true}) {
    auto c = cfg;
    c.taylor_j_filter = j;
    c.variant_suffix = "@J=" + std::to_string(j);
    c.write_outputs = false;
    auto r = run_experiment(c);
    for (auto& x : r.records) merged.records.push_back(x);
    for (auto& x : r.diagnostics) merged.diagnostics.push_back(x);
    for (auto& x : r.notes) merged.notes.push_back(x);
  }
  if (cfg.write_outputs) {
    fs::create_directories(cfg.out_dir);
    merged.metrics_path = cfg.out_dir / ((cfg.name == "metrics" ? std::string("mismatch_taylor") : cfg.name) + ".csv");
    write_metrics_csv(merged.metrics_path, merged.records);
    std::vector<std::string> warnings;
    PlotOptions po;
    po.title = "Taylor-order mismatch";
    po.x_label = "noise level -log10(p_r)";
    merged.plots = plot_metrics_file(merged.metrics_path, cfg.out_dir, &warnings, po);
    for (auto& w : warnings) merged.notes.push_back(w);
  }
  return merged;
}

// -- latency -----------------------------------------------------------------------------------------------

std::uint64_t encoder_macs(const encoders::EncoderArch& arch) {
  const auto shapes = arch.layer_shapes();
  std::uint64_t macs = 0;
  std::size_t in_c = 1;
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    const auto& s = shapes.at(i + 1);  // (C, H, W)
    macs += static_cast<std::uint64_t>(s[0] * s[1] * s[2] * in_c * arch.kernel * arch.kernel);
    in_c = arch.channels[i];
  }
  std::size_t head_in = arch.flatten_size();
  if (arch.with_prior) {
    macs += arch.m * arch.prior_width;
    head_in += arch.prior_width;
  }
  macs += head_in * arch.hidden + arch.hidden * arch.p;
  return macs;
}

std::uint64_t gain_net_macs(const gain::GainNetArch& a) {
  auto gru = [](std::size_t in, std::size_t h) { return 3 * (in * h + h * h); };
  const std::size_t fs_w = a.m + 1, fo = a.p + 1;
  return gru(fs_w, a.hidden_q) + gru(a.hidden_q + fs_w, a.hidden_sigma) + a.hidden_sigma * a.expand +
         gru(a.expand + 2 * fo, a.hidden_s) + (a.hidden_sigma + a.hidden_s) * a.head_hidden + a.head_hidden * a.m * a.p;
}

std::uint64_t ekf_macs(std::size_t m, std::size_t p) {
  // F Sigma F^T, H Sigma H^T, LDLT of S, S^-1 H Sigma, Joseph form.
  return 2 * m * m * m + 2 * p * m * m + p * p * p / 3 + p * p * m + 2 * m * m * p + 2 * m * m * m + m * p * p;
}

ExperimentResult run_latency(const ExperimentConfig& cfg, const LatencyOptions& opt) {
  cfg.validate();
  if (opt.trajectories == 0 || opt.length < 2 || opt.repeats == 0) throw InvalidArgument("latency: empty workload");
#if defined(__linux__)
  if (opt.pin_cpu) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(0, &set);
    sched_setaffinity(0, sizeof set, &set);
  }
#endif
  ExperimentResult result;
  const double level = cfg.noise_levels.front();
  const std::uint64_t seed = cfg.seeds.front();
  const auto fspec = filter_spec(cfg, level);
  const std::vector<Variant> want{Variant::kEncoderPriorEkf, Variant::kLatentKalmanNet};
  auto art = prepare_artifacts(cfg, level, seed, want, false);
  if (!art.warm || !art.lkn) {
    result.notes.push_back("no cached checkpoints for this configuration; timing freshly initialized weights");
    const auto dspec = data_spec(cfg, level);
    encoders::Encoder warm(encoders::EncoderArch::for_model(dspec, true), seed + 2);
    art.r_hat = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(fspec.p()), static_cast<Eigen::Index>(fspec.p()));
    art.lkn = pipeline::assemble(fspec.dynamics, fspec.selection, warm, cfg.schedule);
    art.warm = std::move(warm);
  }
  // One encoder for every variant so the comparison isolates the filtering stage.
  art.lkn = pipeline::LatentKalmanNet(fspec.dynamics, fspec.selection, *art.warm, art.lkn->gain_arch(), art.lkn->gain_params());
  const auto numeric = std::make_shared<models::NumericJacobianDynamics>(fspec.dynamics);
  const auto test = make_test_data(cfg, level, seed ^ 0x1A7E1A7EULL, opt.trajectories, opt.length);
  const auto x0s = initial_estimates(test, seed);
  const double q2 = cfg.model == models::ModelKind::kPendulum ? models::kPendulumQ2 : models::kLorenzQ2;
  filters::LatentEkfConfig ekf{q2, art.r_hat};
  const std::string hash = config_hash(cfg.to_json());

  struct Entry {
    std::string name;
    std::function<void(std::size_t)> run;
    std::uint64_t params, ops;
    std::vector<double> best{};
  };
  encoders::EncoderInference enc(*art.warm);
  pipeline::InferenceSession session(*art.lkn);
  double sink = 0.0;
  std::vector<Entry> entries;
  entries.push_back({"latent-kalmannet",
                     [&](std::size_t d) { sink += session.run(test, d, x0s[d]).back()(0); },
                     count_params(*art.warm) + art.lkn->gain_params().parameter_count(),
                     encoder_macs(art.warm->arch()) + gain_net_macs(art.lkn->gain_arch()) + fspec.m() * fspec.p()});
  entries.push_back({"encoder+prior+ekf",
                     [&](std::size_t d) {
                       sink += run_latent_ekf(*fspec.dynamics, fspec.selection, enc, test, d, x0s[d], ekf).back()(0);
                     },
                     count_params(*art.warm),
                     encoder_macs(art.warm->arch()) + ekf_macs(fspec.m(), fspec.p())});
  entries.push_back({"encoder+prior+ekf[numeric-jacobian]",
                     [&](std::size_t d) {
                       sink += run_latent_ekf(*numeric, fspec.selection, enc, test, d, x0s[d], ekf).back()(0);
                     },
                     count_params(*art.warm),
                     encoder_macs(art.warm->arch()) + ekf_macs(fspec.m(), fspec.p())});
  // Warm-up pass, then repeats interleaving the variants trajectory by trajectory. Each trajectory keeps its
  // fastest time, so load bursts on a shared machine inflate single samples rather than a whole variant.
  for (auto& e : entries) {
    e.best.assign(test.count(), std::numeric_limits<double>::infinity());
    for (std::size_t d = 0; d < test.count(); ++d) e.run(d);
  }
  for (std::size_t r = 0; r < opt.repeats; ++r)
    for (std::size_t d = 0; d < test.count(); ++d)
      for (auto& e : entries) {
        const auto t0 = Clock::now();
        e.run(d);
        e.best[d] = std::min(e.best[d], std::chrono::duration<double>(Clock::now() - t0).count());
      }
  const double steps = static_cast<double>(test.count() * (test.length() - 1));
  for (const auto& e : entries) {
    MetricRecord rec;
    rec.variant = e.name;
    rec.noise_level = level;
    rec.mse_db = std::numeric_limits<double>::quiet_NaN();
    rec.std_db = std::numeric_limits<double>::quiet_NaN();
    rec.latency_us_per_step = 1e6 * std::accumulate(e.best.begin(), e.best.end(), 0.0) / steps;
    rec.param_count = e.params;
    rec.op_count = e.ops;
    rec.seed = seed;
    rec.config_hash = hash;
    note(cfg, e.name + ": " + std::to_string(rec.latency_us_per_step) + " us/step");
    result.records.push_back(rec);
  }
  if (!std::isfinite(sink)) result.notes.push_back("latency run produced non-finite estimates");
  if (cfg.write_outputs) {
    fs::create_directories(cfg.out_dir);
    result.metrics_path = cfg.out_dir / (cfg.name == "metrics" ? std::string("latency.csv") : cfg.name + ".csv");
    write_metrics_csv(result.metrics_path, result.records);
  }
  return result;
}

}  // namespace latentkf::bench
