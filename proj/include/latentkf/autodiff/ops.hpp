// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops on batch-major tensors. Rank-2 inputs are (B, features);
// images are (B, C, H, W). Shape errors throw ShapeError naming both shapes.
#pragma once

#include "latentkf/autodiff/tape.hpp"

#include <functional>
#include <random>

namespace latentkf::ad {

// -- layers ----------------------------------------------------------------------

/// x (B,in), w (out,in), b (out) -> (B,out).
template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
/// Bias-free variant.
template <class T>
Var<T> linear(Var<T> x, Var<T> w);

/// x (B,C,H,W), w (O,C,k,k), b (O) -> (B,O,OH,OW), OH = floor((H + 2 pad - k) / stride) + 1.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t padding);

struct BatchNormOptions {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over (B, C, ...) with channel axis 1. Training mode normalizes with biased
/// batch statistics and blends the unbiased ones into the running parameters; inference mode uses the
/// running parameters only.
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  const BatchNormOptions& opts);

// -- elementwise -----------------------------------------------------------------

template <class T>
Var<T> relu(Var<T> x);
template <class T>
Var<T> tanh(Var<T> x);
template <class T>
Var<T> sigmoid(Var<T> x);
template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> x, T s);
/// Column-wise constant affine map on (B,d): y[b,i] = x[b,i] * gain[i] + shift[i].
template <class T>
Var<T> affine_columns(Var<T> x, std::vector<T> gain, std::vector<T> shift);
/// (B,d): column i shifted by whole multiples of periods[i] to lie within half a period of ref
/// (periods[i] == 0 leaves it alone). Gradient flows to x only.
template <class T>
Var<T> wrap_near(Var<T> x, Var<T> ref, std::vector<T> periods);

// -- structure -------------------------------------------------------------------

/// Concatenation of rank-2 inputs along the feature axis.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs);
template <class T>
Var<T> reshape(Var<T> x, Shape shape);
/// (B, ...) -> (B, prod(...)).
template <class T>
Var<T> flatten(Var<T> x);
/// (B,m) -> (B,p) picking the listed columns.
template <class T>
Var<T> select_columns(Var<T> x, std::vector<std::size_t> columns);
/// K (B,m,p) times v (B,p) -> (B,m).
template <class T>
Var<T> batched_matvec(Var<T> k, Var<T> v);
/// (B,d) -> (B,d+1): [x / n, n] with n = sqrt(|x|^2 + eps^2), smooth at x = 0.
template <class T>
Var<T> normalize_with_norm(Var<T> x, double eps = 1e-6);

/// Row-wise map with a caller-supplied Jacobian, evaluated in double precision.
struct RowFunction {
  std::size_t in = 0;
  std::size_t out = 0;
  std::function<void(const double* x, double* y)> eval;
  /// Row-major (out, in).
  std::function<void(const double* x, double* jac)> jacobian;
};

/// y[b] = f(x[b]); backward applies J(x[b])^T.
template <class T>
Var<T> map_rows(Var<T> x, RowFunction f);

// -- reductions ------------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> x);
template <class T>
Var<T> mean(Var<T> x);
/// Sum of squared differences.
template <class T>
Var<T> sse(Var<T> a, Var<T> b);
/// Mean of squared differences over all entries.
template <class T>
Var<T> mse(Var<T> a, Var<T> b);

// -- recurrent cell ----------------------------------------------------------------

/// Parameter handles for one gated recurrent cell: update (z), reset (r) and candidate (n) gates.
template <class T>
struct GruVars {
  Var<T> w[3];  // (hidden, in)
  Var<T> u[3];  // (hidden, hidden)
  Var<T> b[3];  // (hidden)
};

/// h' = (1 - z) h + z n, z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r h) + bn).
template <class T>
Var<T> gru_cell(Var<T> x, Var<T> h, const GruVars<T>& g);

/// Registers "<prefix>.w_z" ... "<prefix>.b_n".
template <class T>
void add_gru_params(ParamSet<T>& set, const std::string& prefix, std::size_t in, std::size_t hidden);
template <class T>
GruVars<T> gru_vars(Tape<T>& tape, ParamSet<T>& set, const std::string& prefix);

// -- initialization ------------------------------------------------------------------

/// U(-bound, bound) with bound = sqrt(1 / fan_in) scaled by `gain`.
template <class T>
void init_uniform(Parameter<T>& p, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0);

}  // namespace latentkf::ad
