// SPDX-License-Identifier: Apache-2.0
#include "latentkf/pipeline.hpp"

#include "latentkf/autodiff/checkpoint.hpp"
#include "latentkf/autodiff/ops.hpp"
#include "latentkf/error.hpp"
#include "latentkf/filters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace latentkf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// -- schedule ------------------------------------------------------------------------------------

void TrainSchedule::validate() const {
  warm_start.validate();
  if (prior_sigma < 0.0 || !std::isfinite(prior_sigma)) throw InvalidArgument("prior_sigma must be finite and >= 0");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(gain_learning_rate > 0.0) || !(encoder_learning_rate > 0.0)) throw InvalidArgument("learning rates must be positive");
  if (gain_weight_decay < 0.0 || encoder_weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
  if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
  if (!std::isfinite(initial_gain)) throw InvalidArgument("initial_gain must be finite");
}

json TrainSchedule::to_json() const {
  return {{"warm_start",
           {{"optimizer", ad::to_string(warm_start.kind)},
            {"learning_rate", warm_start.learning_rate},
            {"weight_decay", warm_start.weight_decay},
            {"batch_size", warm_start.batch_size},
            {"epochs", warm_start.epochs}}},
          {"prior_sigma", prior_sigma},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", ad::to_string(optimizer)},
          {"gain_learning_rate", gain_learning_rate},
          {"encoder_learning_rate", encoder_learning_rate},
          {"gain_weight_decay", gain_weight_decay},
          {"encoder_weight_decay", encoder_weight_decay},
          {"clip_norm", clip_norm},
          {"bptt_window", bptt_window},
          {"initial_gain", initial_gain},
          {"update_encoder", update_encoder},
          {"metric_components", metric_components},
          {"seed", seed}};
}

TrainSchedule TrainSchedule::from_json(const json& j) {
  TrainSchedule s;
  try {
    if (j.contains("warm_start")) {
      const auto& w = j.at("warm_start");
      s.warm_start.kind = ad::optimizer_kind_from_string(w.value("optimizer", ad::to_string(s.warm_start.kind)));
      s.warm_start.learning_rate = w.value("learning_rate", s.warm_start.learning_rate);
      s.warm_start.weight_decay = w.value("weight_decay", s.warm_start.weight_decay);
      s.warm_start.batch_size = w.value("batch_size", s.warm_start.batch_size);
      s.warm_start.epochs = w.value("epochs", s.warm_start.epochs);
    }
    s.prior_sigma = j.value("prior_sigma", s.prior_sigma);
    s.epochs = j.value("epochs", s.epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.optimizer = ad::optimizer_kind_from_string(j.value("optimizer", ad::to_string(s.optimizer)));
    s.gain_learning_rate = j.value("gain_learning_rate", s.gain_learning_rate);
    s.encoder_learning_rate = j.value("encoder_learning_rate", s.encoder_learning_rate);
    s.gain_weight_decay = j.value("gain_weight_decay", s.gain_weight_decay);
    s.encoder_weight_decay = j.value("encoder_weight_decay", s.encoder_weight_decay);
    s.clip_norm = j.value("clip_norm", s.clip_norm);
    s.bptt_window = j.value("bptt_window", s.bptt_window);
    s.initial_gain = j.value("initial_gain", s.initial_gain);
    s.update_encoder = j.value("update_encoder", s.update_encoder);
    s.metric_components = j.value("metric_components", s.metric_components);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("training schedule: ") + e.what());
  }
  s.validate();
  return s;
}

json TrainingLog::to_json() const {
  json epochs_j = json::array();
  for (const auto& e : epochs) {
    epochs_j.push_back({{"epoch", e.epoch},
                        {"gain_pass_loss", e.gain_pass_loss},
                        {"encoder_pass_loss", e.encoder_pass_loss},
                        {"validation_mse", e.validation_mse},
                        {"max_grad_norm", e.max_grad_norm},
                        {"clipped_batches", e.clipped_batches}});
  }
  return {{"warm_start_validation_mse", warm_start_validation_mse},
          {"initial_loss", initial_loss},
          {"epochs", epochs_j},
          {"selected_epoch", selected_epoch},
          {"diverged", diverged},
          {"divergence_reason", divergence_reason}};
}

// -- model -------------------------------------------------------------------------------------------

LatentKalmanNet::LatentKalmanNet(std::shared_ptr<const models::Dynamics> dynamics, models::SelectionMatrix selection,
                                 encoders::Encoder encoder, gain::GainNetArch gain_arch, ad::ParamSet<float> gain_params)
    : dynamics_(std::move(dynamics)),
      selection_(std::move(selection)),
      encoder_(std::move(encoder)),
      gain_arch_(gain_arch),
      gain_params_(std::move(gain_params)) {
  if (!dynamics_) throw InvalidArgument("pipeline: dynamics must not be null");
  gain_arch_.validate();
  const auto& ea = encoder_.arch();
  if (dynamics_->state_dim() != ea.m || selection_.cols() != ea.m || selection_.rows() != ea.p) {
    throw ShapeError("pipeline: dynamics, selection and encoder dimensions disagree");
  }
  if (gain_arch_.m != ea.m || gain_arch_.p != ea.p) throw ShapeError("pipeline: gain net dimensions disagree with the encoder");
}

void LatentKalmanNet::set_dynamics(std::shared_ptr<const models::Dynamics> dynamics) {
  if (!dynamics || dynamics->state_dim() != encoder_.arch().m) throw ShapeError("pipeline: replacement dynamics has the wrong dimension");
  dynamics_ = std::move(dynamics);
}

// -- inference ---------------------------------------------------------------------------------------

InferenceSession::InferenceSession(const LatentKalmanNet& net)
    : dynamics_(net.dynamics_ptr()),
      indices_(net.selection().indices()),
      encoder_(net.encoder()),
      gain_(net.gain_arch(), net.gain_params()) {
  const auto m = static_cast<Eigen::Index>(net.gain_arch().m);
  const auto p = static_cast<Eigen::Index>(net.gain_arch().p);
  x_ = StateVector::Zero(m);
  prior_ = StateVector::Zero(m);
  z_ = Eigen::VectorXd::Zero(p);
  z_pred_ = Eigen::VectorXd::Zero(p);
  k_ = Eigen::MatrixXd::Zero(m, p);
  k_rm_.setZero(m, p);
  with_prior_ = net.encoder().arch().with_prior;
  const auto periods = dynamics_->periods();
  for (std::size_t i : indices_) z_periods_.push_back(periods[i]);
}

void InferenceSession::reset(const StateVector& x0) {
  if (x0.size() != x_.size()) throw ShapeError("inference reset: x0 has the wrong dimension");
  x_ = x0;
  gain_.reset(x0.data(), indices_);
}

const StateVector& InferenceSession::step(std::span<const float> frame) {
  prior_ = dynamics_->evolve(x_);
  for (std::size_t i = 0; i < indices_.size(); ++i) z_pred_(static_cast<Eigen::Index>(i)) = prior_(static_cast<Eigen::Index>(indices_[i]));
  encoder_.run(frame.data(), with_prior_ ? prior_.data() : nullptr, z_.data());
  // Periodic features are taken on the branch nearest the prediction.
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    auto& zi = z_(static_cast<Eigen::Index>(i));
    zi = models::wrap_near(zi, z_pred_(static_cast<Eigen::Index>(i)), z_periods_[i]);
  }
  gain_.step(z_.data(), z_pred_.data(), prior_.data(), x_.data(), k_rm_.data());
  k_ = k_rm_;
  x_ = prior_ + k_ * (z_ - z_pred_);
  return x_;
}

std::vector<StateVector> InferenceSession::run(const data::Dataset& dataset, std::size_t trajectory, const StateVector& x0) {
  std::vector<StateVector> out;
  out.reserve(dataset.length());
  reset(x0);
  out.push_back(x0);
  for (std::size_t t = 1; t < dataset.length(); ++t) out.push_back(step(dataset.frame_span(trajectory, t)));
  return out;
}

namespace {

ad::RowFunction make_evolve(const models::Dynamics* f, std::shared_ptr<const models::Dynamics> keep) {
  const std::size_t m = f->state_dim();
  ad::RowFunction rf;
  rf.in = m;
  rf.out = m;
  rf.eval = [f, keep, m](const double* x, double* y) {
    const StateVector xv = Eigen::Map<const Eigen::VectorXd>(x, static_cast<Eigen::Index>(m));
    const StateVector yv = f->evolve(xv);
    std::copy(yv.data(), yv.data() + m, y);
  };
  rf.jacobian = [f, keep, m](const double* x, double* jac) {
    const StateVector xv = Eigen::Map<const Eigen::VectorXd>(x, static_cast<Eigen::Index>(m));
    const models::Matrix j = f->jacobian(xv);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) jac[r * m + c] = j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  };
  return rf;
}

template <class T>
ad::Var<T> detach(ad::Tape<T>& tape, ad::Var<T> v) {
  return tape.constant(v.value());
}

}  // namespace

ad::RowFunction evolve_function(std::shared_ptr<const models::Dynamics> dynamics) {
  if (!dynamics) throw InvalidArgument("evolve_function: dynamics must not be null");
  const auto* raw = dynamics.get();
  return make_evolve(raw, std::move(dynamics));
}

template <class T>
ad::Var<T> rollout_loss(ad::Tape<T>& tape, const models::Dynamics& dynamics, const models::SelectionMatrix& selection,
                        const encoders::EncoderArch& enc_arch, ad::ParamSet<T>& enc_params,
                        const gain::GainNetArch& gain_arch, ad::ParamSet<T>& gain_params, const ad::Tensor<T>& frames,
                        const ad::Tensor<T>& states, const ad::Tensor<T>& x0, bool bn_training, std::size_t bptt_window,
                        std::vector<ad::Var<T>>* estimates) {
  const std::size_t m = dynamics.state_dim();
  if (frames.rank() != 3 || states.rank() != 3 || x0.rank() != 2) throw ShapeError("rollout: frames/states must be rank 3, x0 rank 2");
  const std::size_t b = frames.dim(0), len = frames.dim(1), n = frames.dim(2);
  if (states.dim(0) != b || states.dim(1) != len || states.dim(2) != m) ad::throw_shape_mismatch("rollout states", states.shape, {b, len, m});
  if (x0.dim(0) != b || x0.dim(1) != m) ad::throw_shape_mismatch("rollout x0", x0.shape, {b, m});
  if (n != enc_arch.height * enc_arch.width) throw ShapeError("rollout: frame size does not match the encoder");
  if (len < 2) throw InvalidArgument("rollout: trajectories need at least two samples");
  const auto& idx = selection.indices();
  const ad::RowFunction f = make_evolve(&dynamics, nullptr);
  const auto periods = dynamics.periods();
  const bool periodic = std::any_of(periods.begin(), periods.end(), [](double v) { return v > 0.0; });
  std::vector<T> state_periods(periods.begin(), periods.end()), z_periods;
  for (std::size_t i : idx) z_periods.push_back(static_cast<T>(periods[i]));

  ad::Var<T> x_prev = tape.constant(x0);
  auto state = gain::gain_reset(tape, gain_arch, x_prev, idx);
  std::optional<ad::Var<T>> total;
  ad::Tensor<T> frame_t({b, n}), label_t({b, m});
  for (std::size_t t = 1; t < len; ++t) {
    if (bptt_window > 0 && t > 1 && (t - 1) % bptt_window == 0) {
      x_prev = detach(tape, x_prev);
      state.h_q = detach(tape, state.h_q);
      state.h_sigma = detach(tape, state.h_sigma);
      state.h_s = detach(tape, state.h_s);
      state.prev_z = detach(tape, state.prev_z);
      state.prev_prior = detach(tape, state.prev_prior);
    }
    auto prior = ad::map_rows(x_prev, f);
    auto z_pred = ad::select_columns(prior, idx);
    for (std::size_t k = 0; k < b; ++k) {
      std::copy_n(frames.ptr() + (k * len + t) * n, n, frame_t.ptr() + k * n);
      std::copy_n(states.ptr() + (k * len + t) * m, m, label_t.ptr() + k * m);
    }
    auto z = encoders::encoder_forward(tape, enc_arch, enc_params, tape.constant(frame_t),
                                       enc_arch.with_prior ? std::optional<ad::Var<T>>(prior) : std::nullopt, bn_training);
    if (periodic) z = ad::wrap_near(z, z_pred, z_periods);
    auto k_t = gain::gain_step(tape, gain_arch, gain_params, state, z, z_pred, prior, x_prev);
    auto x = ad::add(prior, ad::batched_matvec(k_t, ad::sub(z, z_pred)));
    auto label = tape.constant(label_t);
    auto err = ad::sse(periodic ? ad::wrap_near(x, label, state_periods) : x, label);
    total = total ? ad::add(*total, err) : err;
    if (estimates) estimates->push_back(x);
    x_prev = x;
  }
  return ad::scale(*total, static_cast<T>(1.0 / static_cast<double>(b * (len - 1))));
}

template ad::Var<float> rollout_loss<float>(ad::Tape<float>&, const models::Dynamics&, const models::SelectionMatrix&,
                                            const encoders::EncoderArch&, ad::ParamSet<float>&, const gain::GainNetArch&,
                                            ad::ParamSet<float>&, const ad::Tensor<float>&, const ad::Tensor<float>&,
                                            const ad::Tensor<float>&, bool, std::size_t, std::vector<ad::Var<float>>*);
template ad::Var<double> rollout_loss<double>(ad::Tape<double>&, const models::Dynamics&, const models::SelectionMatrix&,
                                              const encoders::EncoderArch&, ad::ParamSet<double>&,
                                              const gain::GainNetArch&, ad::ParamSet<double>&,
                                              const ad::Tensor<double>&, const ad::Tensor<double>&,
                                              const ad::Tensor<double>&, bool, std::size_t,
                                              std::vector<ad::Var<double>>*);

// -- training ----------------------------------------------------------------------------------------

encoders::EncoderTrainResult warm_start(const models::SSModelSpec& spec, const data::Dataset& dataset,
                                        const data::SplitIndices& splits, const TrainSchedule& schedule,
                                        const encoders::Encoder* init) {
  schedule.validate();
  encoders::EncoderTrainConfig cfg;
  cfg.optimizer = schedule.warm_start;
  cfg.prior_mode = encoders::PriorMode::kNoisyGroundTruth;
  cfg.prior_sigma = schedule.prior_sigma > 0.0 ? schedule.prior_sigma : 3.0 * std::sqrt(spec.q2);
  cfg.seed = schedule.seed;
  return encoders::train_encoder(dataset, splits.train, splits.validation, spec.selection,
                                 encoders::EncoderArch::for_model(spec, true), cfg, init);
}

LatentKalmanNet assemble(std::shared_ptr<const models::Dynamics> dynamics, const models::SelectionMatrix& selection,
                         const encoders::Encoder& encoder, const TrainSchedule& schedule) {
  const std::size_t m = encoder.arch().m, p = encoder.arch().p;
  const auto arch = gain::GainNetArch::for_dims(m, p);
  Eigen::MatrixXd k0 = schedule.initial_gain * selection.dense().transpose();
  auto params = gain::make_gain_params<float>(arch, schedule.seed ^ 0x6A1E5EEDULL, k0);
  return LatentKalmanNet(std::move(dynamics), selection, encoder, arch, std::move(params));
}

double evaluate_mse(const LatentKalmanNet& net, const data::Dataset& dataset, std::span<const std::size_t> trajectories,
                    std::uint64_t seed, std::span<const std::size_t> components) {
  if (trajectories.empty()) throw InvalidArgument("evaluate_mse: no trajectories");
  InferenceSession session(net);
  const auto periods = net.dynamics().periods();
  auto sq = [&](const StateVector& x, std::span<const float> truth, std::size_t i) {
    return std::pow(models::wrap_near(x(static_cast<Eigen::Index>(i)) - truth[i], 0.0, periods[i]), 2);
  };
  models::Rng rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t d : trajectories) {
    const StateVector x0 = filters::initial_estimate(dataset.state(d, 0), rng);
    session.reset(x0);
    for (std::size_t t = 1; t < dataset.length(); ++t) {
      const StateVector& x = session.step(dataset.frame_span(d, t));
      auto truth = dataset.state_span(d, t);
      if (components.empty()) {
        for (std::size_t i = 0; i < static_cast<std::size_t>(x.size()); ++i) total += sq(x, truth, i);
      } else {
        for (std::size_t i : components) total += sq(x, truth, i);
      }
      ++count;
    }
  }
  const double mse = total / static_cast<double>(count);
  return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

namespace {

struct Batch {
  ad::Tensor<float> frames, states, x0;
};

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> traj, models::Rng& rng) {
  const std::size_t b = traj.size(), len = ds.length(), n = ds.frame_size(), m = ds.state_dim();
  Batch out{ad::Tensor<float>({b, len, n}), ad::Tensor<float>({b, len, m}), ad::Tensor<float>({b, m})};
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t d = traj[k];
    std::copy_n(ds.frame_span(d, 0).data(), len * n, out.frames.ptr() + k * len * n);
    std::copy_n(ds.state_span(d, 0).data(), len * m, out.states.ptr() + k * len * m);
    const StateVector x0 = filters::initial_estimate(ds.state(d, 0), rng);
    for (std::size_t i = 0; i < m; ++i) out.x0.data[k * m + i] = static_cast<float>(x0(static_cast<Eigen::Index>(i)));
  }
  return out;
}

}  // namespace

TrainingLog train_alternating(LatentKalmanNet& net, const data::Dataset& dataset, const data::SplitIndices& splits,
                              const TrainSchedule& schedule, const std::function<void(const EpochRecord&)>& on_epoch) {
  schedule.validate();
  if (splits.train.empty()) throw InvalidArgument("training split is empty");
  if (dataset.state_dim() != net.gain_arch().m || dataset.frame_size() != net.encoder().arch().height * net.encoder().arch().width) {
    throw ShapeError("dataset does not match the pipeline dimensions");
  }
  const auto& val = splits.validation.empty() ? splits.train : splits.validation;
  const std::uint64_t val_seed = schedule.seed ^ 0xA11DA7EULL;

  auto& enc = net.encoder().params();
  auto& gp = net.gain_params();
  auto make_opt = [&](ad::ParamSet<float>& ps, double lr, double wd) {
    ad::OptimizerConfig c;
    c.kind = schedule.optimizer;
    c.learning_rate = lr;
    c.weight_decay = wd;
    c.batch_size = schedule.batch_size;
    c.epochs = std::max<std::size_t>(schedule.epochs, 1);
    return ad::Optimizer<float>(ps, c);
  };
  ad::Optimizer<float> gain_opt = make_opt(gp, schedule.gain_learning_rate, schedule.gain_weight_decay);
  ad::Optimizer<float> enc_opt = make_opt(enc, schedule.encoder_learning_rate, schedule.encoder_weight_decay);

  TrainingLog log;
  double best = evaluate_mse(net, dataset, val, val_seed, schedule.metric_components);
  log.warm_start_validation_mse = best;
  ad::ParamSet<float> best_enc = enc, best_gain = gp;
  std::size_t above = 0;
  bool have_initial = false;
  models::Rng rng(schedule.seed ^ 0x7EA1ULL);
  std::vector<std::size_t> order(splits.train.begin(), splits.train.end());

  // Returns the batch loss; throws DivergenceError on non-finite values. BN keeps its running statistics:
  // rollout batches hold B correlated frames of one time step, too few for batch statistics.
  auto pass = [&](const Batch& batch, ad::ParamSet<float>& trained, ad::ParamSet<float>& frozen,
                  ad::Optimizer<float>& opt, EpochRecord& rec) {
    trained.set_frozen(false);
    frozen.set_frozen(true);
    trained.zero_grad();
    ad::Tape<float> tape;
    auto loss = rollout_loss(tape, net.dynamics(), net.selection(), net.encoder().arch(), enc, net.gain_arch(), gp,
                             batch.frames, batch.states, batch.x0, false, schedule.bptt_window);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw DivergenceError("non-finite rollout loss");
    tape.backward(loss);
    const double norm = trained.clip_grad_norm(schedule.clip_norm);
    if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
    rec.max_grad_norm = std::max(rec.max_grad_norm, norm);
    if (norm > schedule.clip_norm) ++rec.clipped_batches;
    opt.step();
    return lv;
  };

  try {
    for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<Batch> batches;
      for (std::size_t s = 0; s < order.size(); s += schedule.batch_size) {
        const std::size_t b = std::min(schedule.batch_size, order.size() - s);
        batches.push_back(make_batch(dataset, std::span<const std::size_t>(order).subspan(s, b), rng));
      }
      EpochRecord rec;
      rec.epoch = epoch;
      double total = 0.0;
      for (const auto& batch : batches) {
        const double lv = pass(batch, gp, enc, gain_opt, rec);
        if (!have_initial) {
          log.initial_loss = lv;
          have_initial = true;
        }
        total += lv;
      }
      rec.gain_pass_loss = total / static_cast<double>(batches.size());
      if (schedule.update_encoder) {
        total = 0.0;
        for (const auto& batch : batches) total += pass(batch, enc, gp, enc_opt, rec);
        rec.encoder_pass_loss = total / static_cast<double>(batches.size());
      }
      enc.set_frozen(false);
      gp.set_frozen(false);
      rec.validation_mse = evaluate_mse(net, dataset, val, val_seed, schedule.metric_components);
      log.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (rec.validation_mse < best) {
        best = rec.validation_mse;
        best_enc = enc;
        best_gain = gp;
        log.selected_epoch = epoch;
      }
      above = rec.gain_pass_loss > 10.0 * log.initial_loss ? above + 1 : 0;
      if (above >= 3) {
        log.diverged = true;
        log.divergence_reason = "training loss above 10x its initial value for 3 epochs (epoch " + std::to_string(epoch) + ")";
        break;
      }
    }
  } catch (const DivergenceError& e) {
    log.diverged = true;
    log.divergence_reason = std::string(e.what()) + " in epoch " + std::to_string(log.epochs.size() + 1);
  }
  enc.set_frozen(false);
  gp.set_frozen(false);
  enc = best_enc;
  gp = best_gain;
  enc.zero_grad();
  gp.zero_grad();
  return log;
}

// -- persistence ---------------------------------------------------------------------------------------

json encoder_arch_to_json(const encoders::EncoderArch& a) {
  return {{"height", a.height}, {"width", a.width},       {"m", a.m},
          {"p", a.p},           {"channels", a.channels}, {"kernel", a.kernel},
          {"stride", a.stride}, {"padding", a.padding},   {"hidden", a.hidden},
          {"prior_width", a.prior_width}, {"with_prior", a.with_prior}, {"input_scale", a.input_scale},
          {"periods", a.periods}};
}

encoders::EncoderArch encoder_arch_from_json(const json& j) {
  encoders::EncoderArch a;
  try {
    a.height = j.at("height").get<std::size_t>();
    a.width = j.at("width").get<std::size_t>();
    a.m = j.at("m").get<std::size_t>();
    a.p = j.at("p").get<std::size_t>();
    a.channels = j.at("channels").get<std::vector<std::size_t>>();
    a.kernel = j.at("kernel").get<std::size_t>();
    a.stride = j.at("stride").get<std::size_t>();
    a.padding = j.at("padding").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::size_t>();
    a.prior_width = j.at("prior_width").get<std::size_t>();
    a.with_prior = j.at("with_prior").get<bool>();
    a.input_scale = j.at("input_scale").get<double>();
    a.periods = j.value("periods", std::vector<double>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("encoder architecture: ") + e.what());
  }
  a.validate();
  return a;
}

json gain_arch_to_json(const gain::GainNetArch& a) {
  return {{"m", a.m},
          {"p", a.p},
          {"hidden_q", a.hidden_q},
          {"hidden_sigma", a.hidden_sigma},
          {"hidden_s", a.hidden_s},
          {"expand", a.expand},
          {"head_hidden", a.head_hidden}};
}

gain::GainNetArch gain_arch_from_json(const json& j) {
  gain::GainNetArch a;
  try {
    a.m = j.at("m").get<std::size_t>();
    a.p = j.at("p").get<std::size_t>();
    a.hidden_q = j.at("hidden_q").get<std::size_t>();
    a.hidden_sigma = j.at("hidden_sigma").get<std::size_t>();
    a.hidden_s = j.at("hidden_s").get<std::size_t>();
    a.expand = j.at("expand").get<std::size_t>();
    a.head_hidden = j.at("head_hidden").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("gain architecture: ") + e.what());
  }
  a.validate();
  return a;
}

void save_encoder(const encoders::Encoder& encoder, const fs::path& dir, const json& extra) {
  ad::save_checkpoint(encoder.params(), dir, {{"kind", "encoder"}, {"arch", encoder_arch_to_json(encoder.arch())}, {"extra", extra}});
}

encoders::Encoder load_encoder(const fs::path& dir, json* extra) {
  json meta;
  auto params = ad::load_checkpoint(dir, &meta);
  if (meta.value("kind", "") != "encoder" || !meta.contains("arch")) {
    throw FormatError("checkpoint at " + dir.string() + " is not an encoder checkpoint");
  }
  if (extra) *extra = meta.value("extra", json::object());
  return encoders::Encoder(encoder_arch_from_json(meta.at("arch")), std::move(params));
}

void save_pipeline(const LatentKalmanNet& net, const TrainSchedule& schedule, const json& extra, const fs::path& dir) {
  fs::create_directories(dir);
  save_encoder(net.encoder(), dir / "encoder");
  ad::save_checkpoint(net.gain_params(), dir / "gain", {{"kind", "gain"}, {"arch", gain_arch_to_json(net.gain_arch())}});
  const json record = {{"format_version", 1},
                       {"schedule", schedule.to_json()},
                       {"selection", net.selection().indices()},
                       {"state_dim", net.selection().cols()},
                       {"dynamics", net.dynamics().describe()},
                       {"extra", extra}};
  std::ofstream out(dir / "schedule.json");
  if (!out) throw IoError("cannot write " + (dir / "schedule.json").string());
  out << record.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "schedule.json").string());
}

LatentKalmanNet load_pipeline(const fs::path& dir, std::shared_ptr<const models::Dynamics> dynamics, json* schedule_record) {
  std::ifstream in(dir / "schedule.json");
  if (!in) throw IoError("missing " + (dir / "schedule.json").string());
  json record;
  try {
    record = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("schedule.json: " + std::string(e.what()));
  }
  auto encoder = load_encoder(dir / "encoder");
  json meta;
  auto gain_params = ad::load_checkpoint(dir / "gain", &meta);
  if (meta.value("kind", "") != "gain" || !meta.contains("arch")) throw FormatError("gain checkpoint is missing its architecture");
  const auto arch = gain_arch_from_json(meta.at("arch"));
  // Check names and shapes against a freshly built set.
  const auto reference = gain::make_gain_params<float>(arch, 0, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(arch.m), static_cast<Eigen::Index>(arch.p)));
  if (reference.size() != gain_params.size()) throw FormatError("gain checkpoint has an unexpected parameter list");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& r = reference.at(i);
    if (!gain_params.contains(r.name) || gain_params.get(r.name).value.shape != r.value.shape) {
      throw FormatError("gain checkpoint parameter '" + r.name + "' is missing or mis-shaped");
    }
  }
  std::vector<std::size_t> sel;
  std::size_t m = 0;
  try {
    sel = record.at("selection").get<std::vector<std::size_t>>();
    m = record.at("state_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("schedule.json: " + std::string(e.what()));
  }
  if (schedule_record) *schedule_record = record;
  return LatentKalmanNet(std::move(dynamics), models::SelectionMatrix(sel, m), std::move(encoder), arch, std::move(gain_params));
}

}  // namespace latentkf::pipeline
