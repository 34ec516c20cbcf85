// SPDX-License-Identifier: Apache-2.0
#include "latentkf/gain_net.hpp"

#include "latentkf/autodiff/kernels.hpp"
#include "latentkf/autodiff/ops.hpp"
#include "latentkf/error.hpp"

#include <algorithm>
#include <cmath>

namespace latentkf::gain {

namespace {

constexpr double kFeatureEps = 1e-6;

}  // namespace

GainNetArch GainNetArch::for_dims(std::size_t m, std::size_t p) {
  GainNetArch a;
  a.m = m;
  a.p = p;
  a.hidden_q = std::max<std::size_t>(m * m, 8);
  a.hidden_sigma = std::max<std::size_t>(m * m, 8);
  a.hidden_s = std::max<std::size_t>(p * p, 8);
  a.expand = std::max<std::size_t>(p * p, 4);
  a.head_hidden = 2 * (a.hidden_sigma + a.hidden_s);
  return a;
}

void GainNetArch::validate() const {
  if (m == 0 || p == 0 || p > m) throw InvalidArgument("gain net: need 0 < p <= m");
  if (hidden_q == 0 || hidden_sigma == 0 || hidden_s == 0 || expand == 0 || head_hidden == 0) {
    throw InvalidArgument("gain net: all widths must be positive");
  }
}

template <class T>
ad::ParamSet<T> make_gain_params(const GainNetArch& arch, std::uint64_t seed, const Eigen::MatrixXd& initial_gain) {
  arch.validate();
  if (initial_gain.rows() != static_cast<Eigen::Index>(arch.m) || initial_gain.cols() != static_cast<Eigen::Index>(arch.p)) {
    throw ShapeError("gain net: initial gain must be m x p");
  }
  ad::ParamSet<T> ps;
  std::mt19937_64 rng(seed);
  const std::size_t fs = arch.state_feature_width(), fo = arch.obs_feature_width();
  auto init_gru = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
    ad::add_gru_params(ps, prefix, in, hidden);
    for (const char* g : {"z", "r", "n"}) {
      ad::init_uniform(ps.get(prefix + ".w_" + g), in, rng);
      ad::init_uniform(ps.get(prefix + ".u_" + g), hidden, rng);
    }
  };
  init_gru("gru_q", fs, arch.hidden_q);
  init_gru("gru_sigma", arch.hidden_q + fs, arch.hidden_sigma);
  ad::init_uniform(ps.add("expand.w", {arch.expand, arch.hidden_sigma}), arch.hidden_sigma, rng, std::sqrt(6.0));
  ps.add("expand.b", {arch.expand});
  init_gru("gru_s", arch.expand + 2 * fo, arch.hidden_s);
  const std::size_t head_in = arch.hidden_sigma + arch.hidden_s;
  ad::init_uniform(ps.add("head1.w", {arch.head_hidden, head_in}), head_in, rng, std::sqrt(6.0));
  ps.add("head1.b", {arch.head_hidden});
  ad::init_uniform(ps.add("head2.w", {arch.m * arch.p, arch.head_hidden}), arch.head_hidden, rng, 0.1);
  auto& b2 = ps.add("head2.b", {arch.m * arch.p});
  for (std::size_t i = 0; i < arch.m; ++i)
    for (std::size_t j = 0; j < arch.p; ++j)
      b2.value.data[i * arch.p + j] = static_cast<T>(initial_gain(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  return ps;
}

template <class T>
GainTapeState<T> gain_reset(ad::Tape<T>& tape, const GainNetArch& arch, ad::Var<T> x0,
                            const std::vector<std::size_t>& selection) {
  if (x0.shape().size() != 2 || x0.dim(1) != arch.m) ad::throw_shape_mismatch("gain reset x0", x0.shape(), {0, arch.m});
  if (selection.size() != arch.p) throw ShapeError("gain reset: selection does not have p entries");
  const std::size_t b = x0.dim(0);
  GainTapeState<T> s;
  s.h_q = tape.constant(ad::Tensor<T>({b, arch.hidden_q}));
  s.h_sigma = tape.constant(ad::Tensor<T>({b, arch.hidden_sigma}));
  s.h_s = tape.constant(ad::Tensor<T>({b, arch.hidden_s}));
  s.prev_z = ad::select_columns(x0, selection);
  s.prev_prior = x0;
  return s;
}

template <class T>
ad::Var<T> gain_step(ad::Tape<T>& tape, const GainNetArch& arch, ad::ParamSet<T>& params, GainTapeState<T>& state,
                     ad::Var<T> z, ad::Var<T> z_pred, ad::Var<T> x_prior, ad::Var<T> x_prev) {
  using namespace ad;
  const std::size_t b = z.dim(0);
  if (z.shape() != Shape{b, arch.p} || z_pred.shape() != z.shape()) throw_shape_mismatch("gain step z vs z_pred", z.shape(), z_pred.shape());
  if (x_prior.shape() != Shape{b, arch.m} || x_prev.shape() != x_prior.shape()) {
    throw_shape_mismatch("gain step x_prior vs x_prev", x_prior.shape(), x_prev.shape());
  }
  Var<T> f1 = normalize_with_norm(sub(z, state.prev_z), kFeatureEps);
  Var<T> f2 = normalize_with_norm(sub(z, z_pred), kFeatureEps);
  Var<T> f3 = normalize_with_norm(sub(x_prev, state.prev_prior), kFeatureEps);
  Var<T> f4 = normalize_with_norm(sub(x_prior, x_prev), kFeatureEps);

  state.h_q = gru_cell(f4, state.h_q, gru_vars(tape, params, "gru_q"));
  state.h_sigma = gru_cell(concat<T>({state.h_q, f3}), state.h_sigma, gru_vars(tape, params, "gru_sigma"));
  Var<T> e = relu(dense(state.h_sigma, tape.param(params, "expand.w"), tape.param(params, "expand.b")));
  state.h_s = gru_cell(concat<T>({e, f1, f2}), state.h_s, gru_vars(tape, params, "gru_s"));
  Var<T> hh = relu(dense(concat<T>({state.h_sigma, state.h_s}), tape.param(params, "head1.w"), tape.param(params, "head1.b")));
  Var<T> k = dense(hh, tape.param(params, "head2.w"), tape.param(params, "head2.b"));
  state.prev_z = z;
  state.prev_prior = x_prior;
  return reshape(k, {b, arch.m, arch.p});
}

// -- tape-free inference ---------------------------------------------------------------

GainNetInference::GainNetInference(const GainNetArch& arch, const ad::ParamSet<float>& params)
    : arch_(arch), params_(params) {
  arch_.validate();
  auto ptr = [&](const std::string& name) -> const float* { return params_.get(name).value.ptr(); };
  auto gru = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
    Gru g{};
    const char* names[3] = {"z", "r", "n"};
    for (int k = 0; k < 3; ++k) {
      g.w[k] = ptr(prefix + ".w_" + names[k]);
      g.u[k] = ptr(prefix + ".u_" + names[k]);
      g.b[k] = ptr(prefix + ".b_" + names[k]);
    }
    if (params_.get(prefix + ".w_z").value.shape != ad::Shape{hidden, in}) {
      ad::throw_shape_mismatch(prefix + " weights", params_.get(prefix + ".w_z").value.shape, {hidden, in});
    }
    g.in = in;
    g.hidden = hidden;
    return g;
  };
  const std::size_t fs = arch_.state_feature_width(), fo = arch_.obs_feature_width();
  gru_q_ = gru("gru_q", fs, arch_.hidden_q);
  gru_sigma_ = gru("gru_sigma", arch_.hidden_q + fs, arch_.hidden_sigma);
  gru_s_ = gru("gru_s", arch_.expand + 2 * fo, arch_.hidden_s);
  expand_w_ = ptr("expand.w");
  expand_b_ = ptr("expand.b");
  head1_w_ = ptr("head1.w");
  head1_b_ = ptr("head1.b");
  head2_w_ = ptr("head2.w");
  head2_b_ = ptr("head2.b");
  h_q_.assign(arch_.hidden_q, 0.f);
  h_sigma_.assign(arch_.hidden_sigma, 0.f);
  h_s_.assign(arch_.hidden_s, 0.f);
  prev_z_.assign(arch_.p, 0.f);
  prev_prior_.assign(arch_.m, 0.f);
  f1_.resize(fo);
  f2_.resize(fo);
  f3_.resize(fs);
  f4_.resize(fs);
  in_sigma_.resize(arch_.hidden_q + fs);
  in_s_.resize(arch_.expand + 2 * fo);
  expand_.resize(arch_.expand);
  head_in_.resize(arch_.hidden_sigma + arch_.hidden_s);
  head_hidden_.resize(arch_.head_hidden);
  k_.resize(arch_.m * arch_.p);
  h_tmp_.resize(std::max({arch_.hidden_q, arch_.hidden_sigma, arch_.hidden_s}));
  scratch_.resize(4 * h_tmp_.size());
}

void GainNetInference::reset(const double* x0, const std::vector<std::size_t>& selection) {
  if (selection.size() != arch_.p) throw ShapeError("gain reset: selection does not have p entries");
  std::fill(h_q_.begin(), h_q_.end(), 0.f);
  std::fill(h_sigma_.begin(), h_sigma_.end(), 0.f);
  std::fill(h_s_.begin(), h_s_.end(), 0.f);
  for (std::size_t i = 0; i < arch_.m; ++i) prev_prior_[i] = static_cast<float>(x0[i]);
  for (std::size_t i = 0; i < arch_.p; ++i) prev_z_[i] = prev_prior_[selection[i]];
}

namespace {

/// out = [d / n, n] with d = a - b in float and n = sqrt(|d|^2 + eps^2).
void feature(const float* a, const float* b, std::size_t d, float* out) {
  double sq = kFeatureEps * kFeatureEps;
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = a[i] - b[i];
    sq += static_cast<double>(out[i]) * out[i];
  }
  const float n = static_cast<float>(std::sqrt(sq));
  for (std::size_t i = 0; i < d; ++i) out[i] /= n;
  out[d] = n;
}

}  // namespace

void GainNetInference::run_gru(const Gru& g, const float* x, std::vector<float>& h) {
  ad::kernels::gru_forward_single(x, h.data(), g.w, g.u, g.b, h_tmp_.data(), g.in, g.hidden, scratch_.data());
  std::copy(h_tmp_.begin(), h_tmp_.begin() + static_cast<std::ptrdiff_t>(g.hidden), h.begin());
}

void GainNetInference::step(const double* z, const double* z_pred, const double* x_prior, const double* x_prev,
                            double* k_out) {
  namespace k = ad::kernels;
  const std::size_t m = arch_.m, p = arch_.p;
  float zf[16], zpf[16], xpf[16], xvf[16];
  if (m > 16) throw ShapeError("gain net inference supports m <= 16");
  for (std::size_t i = 0; i < p; ++i) {
    zf[i] = static_cast<float>(z[i]);
    zpf[i] = static_cast<float>(z_pred[i]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    xpf[i] = static_cast<float>(x_prior[i]);
    xvf[i] = static_cast<float>(x_prev[i]);
  }
  feature(zf, prev_z_.data(), p, f1_.data());
  feature(zf, zpf, p, f2_.data());
  feature(xvf, prev_prior_.data(), m, f3_.data());
  feature(xpf, xvf, m, f4_.data());

  run_gru(gru_q_, f4_.data(), h_q_);
  std::copy(h_q_.begin(), h_q_.end(), in_sigma_.begin());
  std::copy(f3_.begin(), f3_.end(), in_sigma_.begin() + static_cast<std::ptrdiff_t>(arch_.hidden_q));
  run_gru(gru_sigma_, in_sigma_.data(), h_sigma_);
  k::dense_forward(h_sigma_.data(), expand_w_, expand_b_, expand_.data(), 1, arch_.hidden_sigma, arch_.expand);
  k::relu_inplace(expand_.data(), expand_.size());
  auto it = std::copy(expand_.begin(), expand_.end(), in_s_.begin());
  it = std::copy(f1_.begin(), f1_.end(), it);
  std::copy(f2_.begin(), f2_.end(), it);
  run_gru(gru_s_, in_s_.data(), h_s_);
  std::copy(h_sigma_.begin(), h_sigma_.end(), head_in_.begin());
  std::copy(h_s_.begin(), h_s_.end(), head_in_.begin() + static_cast<std::ptrdiff_t>(arch_.hidden_sigma));
  k::dense_forward(head_in_.data(), head1_w_, head1_b_, head_hidden_.data(), 1, head_in_.size(), arch_.head_hidden);
  k::relu_inplace(head_hidden_.data(), head_hidden_.size());
  k::dense_forward(head_hidden_.data(), head2_w_, head2_b_, k_.data(), 1, arch_.head_hidden, m * p);
  for (std::size_t i = 0; i < m * p; ++i) k_out[i] = k_[i];
  std::copy(zf, zf + p, prev_z_.begin());
  std::copy(xpf, xpf + m, prev_prior_.begin());
}

double GainNetInference::hidden_norm() const {
  double s = 0.0;
  for (float v : h_q_) s += static_cast<double>(v) * v;
  for (float v : h_sigma_) s += static_cast<double>(v) * v;
  for (float v : h_s_) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

template ad::ParamSet<float> make_gain_params<float>(const GainNetArch&, std::uint64_t, const Eigen::MatrixXd&);
template ad::ParamSet<double> make_gain_params<double>(const GainNetArch&, std::uint64_t, const Eigen::MatrixXd&);
template GainTapeState<float> gain_reset<float>(ad::Tape<float>&, const GainNetArch&, ad::Var<float>,
                                                const std::vector<std::size_t>&);
template GainTapeState<double> gain_reset<double>(ad::Tape<double>&, const GainNetArch&, ad::Var<double>,
                                                  const std::vector<std::size_t>&);
template ad::Var<float> gain_step<float>(ad::Tape<float>&, const GainNetArch&, ad::ParamSet<float>&,
                                         GainTapeState<float>&, ad::Var<float>, ad::Var<float>, ad::Var<float>,
                                         ad::Var<float>);
template ad::Var<double> gain_step<double>(ad::Tape<double>&, const GainNetArch&, ad::ParamSet<double>&,
                                           GainTapeState<double>&, ad::Var<double>, ad::Var<double>,
                                           ad::Var<double>, ad::Var<double>);

}  // namespace latentkf::gain
