// SPDX-License-Identifier: Apache-2.0
#include "latentkf/encoder.hpp"

#include "latentkf/autodiff/kernels.hpp"
#include "latentkf/autodiff/ops.hpp"
#include "latentkf/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latentkf::encoders {

namespace {

constexpr double kBnEps = 1e-5;

std::string conv_name(std::size_t i) { return "conv" + std::to_string(i + 1); }
std::string bn_name(std::size_t i) { return "bn" + std::to_string(i + 1); }

ad::kernels::ConvGeometry conv_geometry(const EncoderArch& arch, std::size_t layer) {
  std::size_t c = 1, h = arch.height, w = arch.width;
  for (std::size_t i = 0; i < layer; ++i) {
    h = (h + 2 * arch.padding - arch.kernel) / arch.stride + 1;
    w = (w + 2 * arch.padding - arch.kernel) / arch.stride + 1;
    c = arch.channels[i];
  }
  return {c, h, w, arch.channels[layer], arch.kernel, arch.stride, arch.padding};
}

}  // namespace

// -- architecture --------------------------------------------------------------------

std::vector<ad::Shape> EncoderArch::layer_shapes() const {
  std::vector<ad::Shape> shapes{{1, height, width}};
  for (std::size_t i = 0; i < channels.size(); ++i) {
    auto g = conv_geometry(*this, i);
    shapes.push_back({g.out_channels, g.out_height(), g.out_width()});
  }
  shapes.push_back({flatten_size()});
  shapes.push_back({hidden});
  shapes.push_back({p});
  return shapes;
}

std::size_t EncoderArch::flatten_size() const {
  auto g = conv_geometry(*this, channels.size() - 1);
  return g.out_channels * g.positions();
}

void EncoderArch::validate() const {
  if (height == 0 || width == 0) throw InvalidArgument("encoder: frame dimensions must be positive");
  if (channels.empty()) throw InvalidArgument("encoder: at least one conv layer required");
  if (kernel == 0 || stride == 0) throw InvalidArgument("encoder: kernel and stride must be positive");
  if (m == 0 || p == 0 || p > m) throw InvalidArgument("encoder: need 0 < p <= m");
  if (hidden == 0) throw InvalidArgument("encoder: hidden width must be positive");
  if (with_prior && prior_width == 0) throw InvalidArgument("encoder: prior branch width must be positive");
  if (!(input_scale > 0.0)) throw InvalidArgument("encoder: input scale must be positive");
  if (!periods.empty() && periods.size() != m) throw ShapeError("encoder: periods must be empty or have length m");
  for (double pr : periods)
    if (!(pr >= 0.0) || !std::isfinite(pr)) throw InvalidArgument("encoder: periods must be finite and >= 0");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (h + 2 * padding < kernel || w + 2 * padding < kernel) throw ShapeError("encoder: conv stack shrinks below the kernel");
    h = (h + 2 * padding - kernel) / stride + 1;
    w = (w + 2 * padding - kernel) / stride + 1;
  }
}

EncoderArch EncoderArch::for_model(const models::SSModelSpec& spec, bool with_prior) {
  EncoderArch arch;
  arch.height = spec.height;
  arch.width = spec.width;
  arch.m = spec.m();
  arch.p = spec.p();
  arch.with_prior = with_prior;
  arch.input_scale = 1.0 / spec.pixel_peak;
  const auto periods = spec.dynamics->periods();
  if (std::any_of(periods.begin(), periods.end(), [](double v) { return v > 0.0; })) arch.periods = periods;
  return arch;
}

// -- parameters ------------------------------------------------------------------------

template <class T>
ad::ParamSet<T> make_encoder_params(const EncoderArch& arch, std::uint64_t seed) {
  arch.validate();
  ad::ParamSet<T> ps;
  std::mt19937_64 rng(seed);
  const double relu_gain = std::sqrt(6.0);
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    auto g = conv_geometry(arch, i);
    ad::init_uniform(ps.add(conv_name(i) + ".w", {g.out_channels, g.channels, g.kernel, g.kernel}), g.patch(), rng,
                     relu_gain);
    ps.add(conv_name(i) + ".b", {g.out_channels});
    ps.add(bn_name(i) + ".gamma", {g.out_channels}).value = ad::Tensor<T>::filled({g.out_channels}, T(1));
    ps.add(bn_name(i) + ".beta", {g.out_channels});
    ps.add(bn_name(i) + ".running_mean", {g.out_channels}, false);
    ps.add(bn_name(i) + ".running_var", {g.out_channels}, false).value = ad::Tensor<T>::filled({g.out_channels}, T(1));
  }
  std::size_t head_in = arch.flatten_size();
  if (arch.with_prior) {
    ad::init_uniform(ps.add("prior.w", {arch.prior_width, arch.m}), arch.m, rng);
    ps.add("prior.b", {arch.prior_width});
    head_in += arch.prior_width;
  }
  ad::init_uniform(ps.add("fc1.w", {arch.hidden, head_in}), head_in, rng, relu_gain);
  ps.add("fc1.b", {arch.hidden});
  ad::init_uniform(ps.add("fc2.w", {arch.p, arch.hidden}), arch.hidden, rng);
  ps.add("fc2.b", {arch.p});
  ps.add("norm.prior_mean", {arch.m}, false);
  ps.add("norm.prior_scale", {arch.m}, false).value = ad::Tensor<T>::filled({arch.m}, T(1));
  ps.add("norm.out_mean", {arch.p}, false);
  ps.add("norm.out_scale", {arch.p}, false).value = ad::Tensor<T>::filled({arch.p}, T(1));
  return ps;
}

LabelStats label_stats(const data::Dataset& dataset, std::span<const std::size_t> trajectories,
                       const models::SelectionMatrix& selection, const std::vector<double>& periods) {
  const std::size_t m = dataset.state_dim();
  if (selection.cols() != m) throw ShapeError("selection matrix width does not match the dataset state dimension");
  if (!periods.empty() && periods.size() != m) throw ShapeError("label statistics: periods must have length m");
  std::vector<double> sum(m, 0.0), sq(m, 0.0);
  std::size_t count = 0;
  for (std::size_t d : trajectories) {
    for (std::size_t t = 0; t < dataset.length(); ++t) {
      auto x = dataset.state_span(d, t);
      for (std::size_t i = 0; i < m; ++i) {
        const double v = periods.empty() ? x[i] : models::wrap_near(x[i], 0.0, periods[i]);
        sum[i] += v;
        sq[i] += v * v;
      }
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("label statistics need at least one labeled frame");
  LabelStats st;
  for (std::size_t i = 0; i < m; ++i) {
    const double mu = sum[i] / static_cast<double>(count);
    const double var = std::max(sq[i] / static_cast<double>(count) - mu * mu, 0.0);
    st.state_mean.push_back(mu);
    st.state_std.push_back(std::max(std::sqrt(var), 1e-3));
  }
  for (std::size_t idx : selection.indices()) {
    st.output_mean.push_back(st.state_mean[idx]);
    st.output_std.push_back(st.state_std[idx]);
  }
  return st;
}

void apply_label_stats(ad::ParamSet<float>& params, const EncoderArch& arch, const LabelStats& stats) {
  if (stats.state_mean.size() != arch.m || stats.output_mean.size() != arch.p) {
    throw ShapeError("label statistics do not match the encoder dimensions");
  }
  for (std::size_t i = 0; i < arch.m; ++i) {
    params.get("norm.prior_mean").value.data[i] = static_cast<float>(stats.state_mean[i]);
    params.get("norm.prior_scale").value.data[i] = static_cast<float>(1.0 / stats.state_std[i]);
  }
  for (std::size_t i = 0; i < arch.p; ++i) {
    params.get("norm.out_mean").value.data[i] = static_cast<float>(stats.output_mean[i]);
    params.get("norm.out_scale").value.data[i] = static_cast<float>(stats.output_std[i]);
  }
}

// -- forward -------------------------------------------------------------------------------

template <class T>
ad::Var<T> encoder_forward(ad::Tape<T>& tape, const EncoderArch& arch, ad::ParamSet<T>& params, ad::Var<T> frames,
                           std::optional<ad::Var<T>> prior, bool bn_training) {
  const std::size_t batch = frames.dim(0);
  const std::size_t n = arch.height * arch.width;
  if (ad::shape_size(frames.shape()) != batch * n) {
    ad::throw_shape_mismatch("encoder frames vs architecture", frames.shape(), {batch, 1, arch.height, arch.width});
  }
  if (arch.with_prior != prior.has_value()) {
    throw InvalidArgument(arch.with_prior ? "encoder with a prior branch needs a prior input"
                                          : "encoder without a prior branch got a prior input");
  }
  const bool bn_batch_stats = bn_training && !params.frozen();
  ad::BatchNormOptions bn{bn_batch_stats, 0.1, kBnEps};

  ad::Var<T> x = ad::scale(ad::reshape(frames, {batch, 1, arch.height, arch.width}), static_cast<T>(arch.input_scale));
  for (std::size_t i = 0; i < arch.channels.size(); ++i) {
    x = ad::conv2d(x, tape.param(params, conv_name(i) + ".w"), tape.param(params, conv_name(i) + ".b"), arch.stride,
                   arch.padding);
    x = ad::relu(x);
    x = ad::batch_norm(x, tape.param(params, bn_name(i) + ".gamma"), tape.param(params, bn_name(i) + ".beta"),
                       params.get(bn_name(i) + ".running_mean"), params.get(bn_name(i) + ".running_var"), bn);
  }
  ad::Var<T> h = ad::flatten(x);
  if (prior) {
    if (prior->shape() != ad::Shape{batch, arch.m}) {
      ad::throw_shape_mismatch("encoder prior", prior->shape(), {batch, arch.m});
    }
    const auto& mu = params.get("norm.prior_mean").value.data;
    const auto& sc = params.get("norm.prior_scale").value.data;
    std::vector<T> shift(arch.m);
    for (std::size_t i = 0; i < arch.m; ++i) shift[i] = -mu[i] * sc[i];
    ad::Var<T> pw = *prior;
    if (!arch.periods.empty()) {
      std::vector<T> per(arch.periods.begin(), arch.periods.end());
      pw = ad::wrap_near(pw, tape.constant(ad::Tensor<T>({batch, arch.m})), std::move(per));
    }
    ad::Var<T> pn = ad::affine_columns(pw, std::vector<T>(sc.begin(), sc.end()), shift);
    ad::Var<T> pf = ad::dense(pn, tape.param(params, "prior.w"), tape.param(params, "prior.b"));
    h = ad::concat<T>({h, pf});
  }
  h = ad::relu(ad::dense(h, tape.param(params, "fc1.w"), tape.param(params, "fc1.b")));
  ad::Var<T> out = ad::dense(h, tape.param(params, "fc2.w"), tape.param(params, "fc2.b"));
  const auto& osc = params.get("norm.out_scale").value.data;
  const auto& omu = params.get("norm.out_mean").value.data;
  return ad::affine_columns(out, std::vector<T>(osc.begin(), osc.end()), std::vector<T>(omu.begin(), omu.end()));
}

// -- encoder -----------------------------------------------------------------------------------

Encoder::Encoder(EncoderArch arch, std::uint64_t seed)
    : arch_(std::move(arch)), params_(make_encoder_params<float>(arch_, seed)) {}

Encoder::Encoder(EncoderArch arch, ad::ParamSet<float> params) : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  const auto reference = make_encoder_params<float>(arch_, 0);
  if (reference.size() != params_.size()) throw ShapeError("encoder parameter set does not match the architecture");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& want = reference.at(i);
    if (!params_.contains(want.name)) throw ShapeError("encoder parameter '" + want.name + "' missing");
    if (params_.get(want.name).value.shape != want.value.shape) {
      ad::throw_shape_mismatch("encoder parameter '" + want.name + "'", params_.get(want.name).value.shape,
                               want.value.shape);
    }
  }
}

LatentFeature Encoder::encode(std::span<const float> frame) const {
  EncoderInference inf(*this);
  return inf.run(frame, nullptr);
}

LatentFeature Encoder::encode_with_prior(std::span<const float> frame, const Eigen::VectorXd& prior) const {
  EncoderInference inf(*this);
  return inf.run(frame, &prior);
}

// -- allocation-free inference -----------------------------------------------------------------

EncoderInference::EncoderInference(const Encoder& encoder) : arch_(encoder.arch()), params_(encoder.params()) {
  std::size_t biggest = arch_.height * arch_.width, cols = 0;
  auto ptr = [&](const std::string& name) -> const float* { return params_.get(name).value.ptr(); };
  for (std::size_t i = 0; i < arch_.channels.size(); ++i) {
    auto g = conv_geometry(arch_, i);
    biggest = std::max(biggest, g.out_channels * g.positions());
    cols = std::max(cols, g.patch() * g.positions());
    convs_.push_back({g.channels, g.height, g.width, g.out_channels, ptr(conv_name(i) + ".w"), ptr(conv_name(i) + ".b"),
                      ptr(bn_name(i) + ".running_mean"), ptr(bn_name(i) + ".running_var"),
                      ptr(bn_name(i) + ".gamma"), ptr(bn_name(i) + ".beta")});
  }
  if (arch_.with_prior) {
    prior_w_ = ptr("prior.w");
    prior_b_ = ptr("prior.b");
  }
  fc1_w_ = ptr("fc1.w");
  fc1_b_ = ptr("fc1.b");
  fc2_w_ = ptr("fc2.w");
  fc2_b_ = ptr("fc2.b");
  prior_mean_ = ptr("norm.prior_mean");
  prior_scale_ = ptr("norm.prior_scale");
  out_mean_ = ptr("norm.out_mean");
  out_scale_ = ptr("norm.out_scale");
  buf_a_.resize(biggest);
  buf_b_.resize(biggest);
  cols_.resize(cols);
  head_in_.resize(arch_.flatten_size() + (arch_.with_prior ? arch_.prior_width : 0));
  hidden_.resize(arch_.hidden);
  prior_in_.resize(arch_.m);
  out_.resize(arch_.p);
}

void EncoderInference::run(const float* frame, const double* prior, double* out) {
  if (arch_.with_prior != (prior != nullptr)) {
    throw InvalidArgument(arch_.with_prior ? "encoder with a prior branch needs a prior input"
                                           : "encoder without a prior branch got a prior input");
  }
  namespace k = ad::kernels;
  const float scale = static_cast<float>(arch_.input_scale);
  for (std::size_t i = 0; i < arch_.height * arch_.width; ++i) buf_a_[i] = frame[i] * scale;
  for (const auto& c : convs_) {
    const k::ConvGeometry g{c.channels, c.height, c.width, c.out_channels, arch_.kernel, arch_.stride, arch_.padding};
    const std::size_t size = g.out_channels * g.positions();
    k::conv2d_forward(buf_a_.data(), c.w, c.b, buf_b_.data(), cols_.data(), 1, g);
    k::relu_inplace(buf_b_.data(), size);
    k::batch_norm_infer(buf_b_.data(), c.mean, c.var, c.gamma, c.beta, buf_a_.data(), 1, g.out_channels,
                        g.positions(), kBnEps);
  }
  const std::size_t flat = arch_.flatten_size();
  std::copy(buf_a_.begin(), buf_a_.begin() + static_cast<std::ptrdiff_t>(flat), head_in_.begin());
  if (prior) {
    for (std::size_t i = 0; i < arch_.m; ++i) {
      const double v = models::wrap_near(prior[i], 0.0, arch_.period(i));
      prior_in_[i] = static_cast<float>(v) * prior_scale_[i] + (-prior_mean_[i] * prior_scale_[i]);
    }
    k::dense_forward(prior_in_.data(), prior_w_, prior_b_, head_in_.data() + flat, 1, arch_.m, arch_.prior_width);
  }
  k::dense_forward(head_in_.data(), fc1_w_, fc1_b_, hidden_.data(), 1, head_in_.size(), arch_.hidden);
  k::relu_inplace(hidden_.data(), hidden_.size());
  k::dense_forward(hidden_.data(), fc2_w_, fc2_b_, out_.data(), 1, arch_.hidden, arch_.p);
  for (std::size_t i = 0; i < arch_.p; ++i) out[i] = static_cast<double>(out_[i] * out_scale_[i] + out_mean_[i]);
}

LatentFeature EncoderInference::run(std::span<const float> frame, const Eigen::VectorXd* prior) {
  if (frame.size() != arch_.height * arch_.width) {
    throw ShapeError("frame of " + std::to_string(frame.size()) + " pixels does not match encoder input " +
                     std::to_string(arch_.height) + "x" + std::to_string(arch_.width));
  }
  if (prior && static_cast<std::size_t>(prior->size()) != arch_.m) {
    throw ShapeError("prior of length " + std::to_string(prior->size()) + " does not match m=" + std::to_string(arch_.m));
  }
  LatentFeature z(static_cast<Eigen::Index>(arch_.p));
  run(frame.data(), prior ? prior->data() : nullptr, z.data());
  return z;
}

// -- training ----------------------------------------------------------------------------------

namespace {

struct Sample {
  std::size_t d, t;
};

std::vector<Sample> all_samples(const data::Dataset& dataset, std::span<const std::size_t> trajectories) {
  std::vector<Sample> out;
  out.reserve(trajectories.size() * dataset.length());
  for (std::size_t d : trajectories)
    for (std::size_t t = 0; t < dataset.length(); ++t) out.push_back({d, t});
  return out;
}

void noisy_prior(const data::Dataset& dataset, const Sample& s, double sigma, models::Rng& rng, float* dst) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto x = dataset.state_span(s.d, s.t);
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = static_cast<float>(x[i] + sigma * normal(rng));
}

}  // namespace

std::vector<double> fit_encoder(Encoder& encoder, const data::Dataset& dataset, std::span<const std::size_t> train,
                                const models::SelectionMatrix& selection, const EncoderTrainConfig& cfg) {
  cfg.optimizer.validate();
  const auto& arch = encoder.arch();
  if (dataset.frame_size() != arch.height * arch.width) throw ShapeError("dataset frames do not match the encoder input");
  if (dataset.state_dim() != arch.m || selection.rows() != arch.p) throw ShapeError("dataset labels do not match the encoder");
  const bool use_prior = arch.with_prior;
  if (use_prior && cfg.prior_mode == PriorMode::kNone) throw InvalidArgument("prior-fed encoder needs a prior mode");

  auto samples = all_samples(dataset, train);
  if (samples.empty()) throw InvalidArgument("encoder training needs at least one frame");
  models::Rng rng(cfg.seed);
  ad::Optimizer<float> opt(encoder.params(), cfg.optimizer);
  encoder.params().set_frozen(false);
  encoder.params().zero_grad();
  const std::size_t n = dataset.frame_size(), m = arch.m, p = arch.p;
  const std::size_t bs = cfg.optimizer.batch_size;
  std::vector<double> losses;
  std::vector<float> inv_scale(p), inv_shift(p), out_periods(p);
  bool periodic = false;
  for (std::size_t i = 0; i < p; ++i) {
    const float sc = encoder.params().get("norm.out_scale").value.data[i];
    inv_scale[i] = 1.0f / sc;
    inv_shift[i] = -encoder.params().get("norm.out_mean").value.data[i] / sc;
    // Periods in standardized units.
    out_periods[i] = static_cast<float>(arch.period(selection.indices()[i])) / sc;
    periodic = periodic || out_periods[i] > 0.0f;
  }

  for (std::size_t epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < samples.size(); start += bs) {
      const std::size_t b = std::min(bs, samples.size() - start);
      ad::Tensor<float> frames({b, n}), labels({b, p}), prior({b, m});
      for (std::size_t k = 0; k < b; ++k) {
        const auto& s = samples[start + k];
        auto f = dataset.frame_span(s.d, s.t);
        std::copy(f.begin(), f.end(), frames.ptr() + k * n);
        auto x = dataset.state_span(s.d, s.t);
        for (std::size_t i = 0; i < p; ++i) {
          const std::size_t j = selection.indices()[i];
          labels.data[k * p + i] = static_cast<float>(models::wrap_near(x[j], 0.0, arch.period(j))) * inv_scale[i] + inv_shift[i];
        }
        if (use_prior) noisy_prior(dataset, s, cfg.prior_sigma, rng, prior.ptr() + k * m);
      }
      ad::Tape<float> tape;
      auto fv = tape.constant(std::move(frames));
      std::optional<ad::Var<float>> pv;
      if (use_prior) pv = tape.constant(std::move(prior));
      auto z = encoder_forward(tape, arch, encoder.params(), fv, pv, true);
      // Standardized residuals: the step size is independent of the label spread.
      auto zn = ad::affine_columns(z, inv_scale, inv_shift);
      auto lv_var = tape.constant(std::move(labels));
      if (periodic) zn = ad::wrap_near(zn, lv_var, out_periods);
      auto loss = ad::scale(ad::sse(zn, lv_var), 1.0f / static_cast<float>(b));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw DivergenceError("encoder training diverged (non-finite loss) at epoch " + std::to_string(epoch + 1));
      tape.backward(loss);
      try {
        opt.step();
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1));
      }
      total += lv * static_cast<double>(b);
      seen += b;
    }
    losses.push_back(total / static_cast<double>(seen));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, losses.back());
  }
  return losses;
}

std::pair<double, Eigen::MatrixXd> encoder_residuals(const Encoder& encoder, const data::Dataset& dataset,
                                                     std::span<const std::size_t> trajectories,
                                                     const models::SelectionMatrix& selection,
                                                     const EncoderTrainConfig& cfg) {
  const auto& arch = encoder.arch();
  const std::size_t p = arch.p, m = arch.m;
  EncoderInference inf(encoder);
  models::Rng rng(cfg.seed ^ 0x5EED5EEDULL);
  std::vector<Eigen::VectorXd> res;
  std::vector<float> priorf(m);
  Eigen::VectorXd prior(static_cast<Eigen::Index>(m)), z(static_cast<Eigen::Index>(p));
  for (const auto& s : all_samples(dataset, trajectories)) {
    const double* pp = nullptr;
    if (arch.with_prior) {
      noisy_prior(dataset, s, cfg.prior_sigma, rng, priorf.data());
      for (std::size_t i = 0; i < m; ++i) prior(static_cast<Eigen::Index>(i)) = priorf[i];
      pp = prior.data();
    }
    inf.run(dataset.frame_span(s.d, s.t).data(), pp, z.data());
    Eigen::VectorXd r = z - selection.apply(dataset.state(s.d, s.t));
    for (std::size_t i = 0; i < p; ++i) r(static_cast<Eigen::Index>(i)) = models::wrap_near(r(static_cast<Eigen::Index>(i)), 0.0, arch.period(selection.indices()[i]));
    res.push_back(r);
  }
  if (res.size() < 2) throw InvalidArgument("residual statistics need at least two frames");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  double sq = 0.0;
  for (const auto& r : res) {
    mean += r;
    sq += r.squaredNorm();
  }
  mean /= static_cast<double>(res.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (const auto& r : res) cov += (r - mean) * (r - mean).transpose();
  cov /= static_cast<double>(res.size() - 1);
  return {sq / static_cast<double>(res.size()), cov};
}

void transfer_weights(Encoder& target, const Encoder& source) {
  auto& dst = target.params();
  const auto& src = source.params();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& p = dst.at(i);
    if (!src.contains(p.name)) continue;
    const auto& q = src.get(p.name);
    if (q.value.shape == p.value.shape) {
      p.value = q.value;
    } else if (p.name == "fc1.w" && p.value.rank() == 2 && q.value.rank() == 2 && p.value.dim(0) == q.value.dim(0) &&
               p.value.dim(1) >= q.value.dim(1)) {
      const std::size_t rows = p.value.dim(0), wide = p.value.dim(1), narrow = q.value.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < wide; ++c) p.value.data[r * wide + c] = c < narrow ? q.value.data[r * narrow + c] : 0.0f;
    } else {
      ad::throw_shape_mismatch("transfer of '" + p.name + "'", q.value.shape, p.value.shape);
    }
  }
}

EncoderTrainResult train_encoder(const data::Dataset& dataset, std::span<const std::size_t> train,
                                 std::span<const std::size_t> validation, const models::SelectionMatrix& selection,
                                 EncoderArch arch, const EncoderTrainConfig& cfg, const Encoder* init) {
  arch.validate();
  EncoderTrainResult result;
  result.encoder = Encoder(arch, cfg.seed);
  if (init) transfer_weights(result.encoder, *init);
  apply_label_stats(result.encoder.params(), arch, label_stats(dataset, train, selection, arch.periods));
  result.epoch_losses = fit_encoder(result.encoder, dataset, train, selection, cfg);
  auto [mse, cov] = encoder_residuals(result.encoder, dataset, validation.empty() ? train : validation, selection, cfg);
  result.validation_mse = mse;
  result.residual_covariance = cov;
  return result;
}

template ad::ParamSet<float> make_encoder_params<float>(const EncoderArch&, std::uint64_t);
template ad::ParamSet<double> make_encoder_params<double>(const EncoderArch&, std::uint64_t);
template ad::Var<float> encoder_forward<float>(ad::Tape<float>&, const EncoderArch&, ad::ParamSet<float>&,
                                               ad::Var<float>, std::optional<ad::Var<float>>, bool);
template ad::Var<double> encoder_forward<double>(ad::Tape<double>&, const EncoderArch&, ad::ParamSet<double>&,
                                                 ad::Var<double>, std::optional<ad::Var<double>>, bool);

}  // namespace latentkf::encoders
