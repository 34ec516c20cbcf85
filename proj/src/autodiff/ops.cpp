// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/ops.hpp"

#include "latentkf/autodiff/kernels.hpp"
#include "latentkf/error.hpp"

#include <cmath>

namespace latentkf::ad {

namespace {

template <class T>
void require_rank(Var<T> x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(x.shape()));
  }
}

template <class T>
void require_same(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape()) throw_shape_mismatch(op, a.shape(), b.shape());
}

template <class T>
Tape<T>& tape_of(Var<T> a) {
  return *a.tape;
}

}  // namespace

// -- layers ----------------------------------------------------------------------

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  require_rank(x, 2, "dense");
  require_rank(w, 2, "dense");
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in) throw_shape_mismatch("dense input vs weight", x.shape(), w.shape());
  if (b.shape() != Shape{out}) throw_shape_mismatch("dense weight vs bias", w.shape(), b.shape());
  Tensor<T> y({batch, out});
  kernels::dense_forward(x.value().ptr(), w.value().ptr(), b.value().ptr(), y.ptr(), batch, in, out);
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  return tape_of(x).record(std::move(y), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    kernels::dense_backward(t.value(xi).ptr(), t.value(wi).ptr(), g.ptr(), t.grad_buffer(xi), t.grad_buffer(wi),
                            t.grad_buffer(bi), batch, in, out);
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in) throw_shape_mismatch("linear input vs weight", x.shape(), w.shape());
  Tensor<T> y({batch, out});
  kernels::dense_forward<T>(x.value().ptr(), w.value().ptr(), nullptr, y.ptr(), batch, in, out);
  const std::size_t xi = x.id, wi = w.id;
  return tape_of(x).record(std::move(y), {x, w}, [=](Tape<T>& t, const Tensor<T>& g) {
    kernels::dense_backward<T>(t.value(xi).ptr(), t.value(wi).ptr(), g.ptr(), t.grad_buffer(xi), t.grad_buffer(wi),
                               nullptr, batch, in, out);
  });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (stride == 0) throw InvalidArgument("conv2d: stride must be positive");
  kernels::ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding};
  if (w.dim(1) != geo.channels || w.dim(2) != w.dim(3)) throw_shape_mismatch("conv2d input vs kernel", x.shape(), w.shape());
  if (geo.height + 2 * padding < geo.kernel || geo.width + 2 * padding < geo.kernel) {
    throw_shape_mismatch("conv2d kernel larger than padded input", x.shape(), w.shape());
  }
  if (b.shape() != Shape{geo.out_channels}) throw_shape_mismatch("conv2d kernel vs bias", w.shape(), b.shape());
  const std::size_t batch = x.dim(0);
  Tensor<T> y({batch, geo.out_channels, geo.out_height(), geo.out_width()});
  auto cols = std::make_shared<std::vector<T>>(batch * geo.patch() * geo.positions());
  kernels::conv2d_forward(x.value().ptr(), w.value().ptr(), b.value().ptr(), y.ptr(), cols->data(), batch, geo);
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  Tape<T>& tape = tape_of(x);
  if (!tape.grad_enabled()) cols.reset();
  return tape.record(std::move(y), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    kernels::conv2d_backward(cols->data(), t.value(wi).ptr(), g.ptr(), t.grad_buffer(xi), t.grad_buffer(wi),
                             t.grad_buffer(bi), batch, geo);
  });
}

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  const BatchNormOptions& opts) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("batch_norm: expected rank >= 2, got " + shape_str(s));
  const std::size_t batch = s[0], channels = s[1];
  const std::size_t length = shape_size(s) / (batch * channels);
  const Shape cs{channels};
  if (gamma.shape() != cs) throw_shape_mismatch("batch_norm input vs gamma", s, gamma.shape());
  if (beta.shape() != cs) throw_shape_mismatch("batch_norm input vs beta", s, beta.shape());
  if (running_mean.value.shape != cs) throw_shape_mismatch("batch_norm input vs running mean", s, running_mean.value.shape);
  if (running_var.value.shape != cs) throw_shape_mismatch("batch_norm input vs running var", s, running_var.value.shape);

  const std::size_t count = batch * length;
  const T* xv = x.value().ptr();
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  Tensor<T> y(s);
  // Normalized input and per-channel inverse std, kept for backward.
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  const bool training = opts.training;
  if (training && count < 2) throw InvalidArgument("batch_norm: training mode needs more than one value per channel");

  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < length; ++l) acc += xv[(b * channels + c) * length + l];
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < length; ++l) {
          const double d = xv[(b * channels + c) * length + l] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      T& rm = running_mean.value.data[c];
      T& rv = running_var.value.data[c];
      rm = static_cast<T>((1.0 - opts.momentum) * rm + opts.momentum * mu);
      rv = static_cast<T>((1.0 - opts.momentum) * rv + opts.momentum * unbiased);
    } else {
      mu = running_mean.value.data[c];
      var = running_var.value.data[c];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + opts.eps));
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t l = 0; l < length; ++l) {
        const std::size_t k = (b * channels + c) * length + l;
        const T xh = static_cast<T>(xv[k] - mu) * is;
        (*xhat)[k] = xh;
        y.data[k] = gv[c] * xh + bv[c];
      }
    }
  }

  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return tape_of(x).record(std::move(y), {x, gamma, beta}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    T* gg = t.grad_buffer(gi);
    T* gb = t.grad_buffer(bi);
    const T* gam = t.value(gi).ptr();
    for (std::size_t c = 0; c < channels; ++c) {
      T sum_g = 0, sum_gx = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < length; ++l) {
          const std::size_t k = (b * channels + c) * length + l;
          sum_g += g.data[k];
          sum_gx += g.data[k] * (*xhat)[k];
        }
      if (gg) gg[c] += sum_gx;
      if (gb) gb[c] += sum_g;
      if (!gx) continue;
      const T is = (*inv_std)[c];
      if (training) {
        const T n = static_cast<T>(count);
        const T coef = gam[c] * is / n;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t l = 0; l < length; ++l) {
            const std::size_t k = (b * channels + c) * length + l;
            gx[k] += coef * (n * g.data[k] - sum_g - (*xhat)[k] * sum_gx);
          }
      } else {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t l = 0; l < length; ++l) {
            const std::size_t k = (b * channels + c) * length + l;
            gx[k] += g.data[k] * gam[c] * is;
          }
      }
    }
  });
}

// -- elementwise -----------------------------------------------------------------

#define LKF_UNARY(NAME, FWD, DERIV)                                                          \
  template <class T>                                                                         \
  Var<T> NAME(Var<T> x) {                                                                    \
    Tensor<T> y(x.shape());                                                                  \
    const auto& xv = x.value().data;                                                         \
    for (std::size_t i = 0; i < xv.size(); ++i) {                                           \
      const T v = xv[i];                                                                     \
      y.data[i] = (FWD);                                                                     \
    }                                                                                        \
    const std::size_t xi = x.id;                                                             \
    auto yv = std::make_shared<Buffer<T>>(y.data);                                      \
    return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {        \
      T* gx = t.grad_buffer(xi);                                                             \
      const auto& xs = t.value(xi).data;                                                     \
      for (std::size_t i = 0; i < g.size(); ++i) {                                           \
        const T v = xs[i];                                                                   \
        const T out = (*yv)[i];                                                              \
        (void)v;                                                                             \
        (void)out;                                                                           \
        gx[i] += g.data[i] * (DERIV);                                                        \
      }                                                                                      \
    });                                                                                      \
  }

LKF_UNARY(relu, v > T(0) ? v : T(0), v > T(0) ? T(1) : T(0))
LKF_UNARY(tanh, std::tanh(v), T(1) - out * out)
LKF_UNARY(sigmoid, T(1) / (T(1) + std::exp(-v)), out*(T(1) - out))

#undef LKF_UNARY

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a, b, "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.value().data[i] + b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape_of(a).record(std::move(y), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (T* ga = t.grad_buffer(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i];
    if (T* gb = t.grad_buffer(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g.data[i];
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a, b, "sub");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.value().data[i] - b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape_of(a).record(std::move(y), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (T* ga = t.grad_buffer(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i];
    if (T* gb = t.grad_buffer(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g.data[i];
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a, b, "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.value().data[i] * b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return tape_of(a).record(std::move(y), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(ai).data;
    const auto& bv = t.value(bi).data;
    if (T* ga = t.grad_buffer(ai)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g.data[i] * bv[i];
    if (T* gb = t.grad_buffer(bi)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g.data[i] * av[i];
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = x.value().data[i] * s;
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g.data[i] * s;
  });
}

template <class T>
Var<T> affine_columns(Var<T> x, std::vector<T> gain, std::vector<T> shift) {
  require_rank(x, 2, "affine_columns");
  const std::size_t batch = x.dim(0), d = x.dim(1);
  if (gain.size() != d || shift.size() != d) {
    throw_shape_mismatch("affine_columns input vs coefficients", x.shape(), Shape{gain.size(), shift.size()});
  }
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < d; ++i) y.data[b * d + i] = x.value().data[b * d + i] * gain[i] + shift[i];
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < d; ++i) gx[b * d + i] += g.data[b * d + i] * gain[i];
  });
}

template <class T>
Var<T> wrap_near(Var<T> x, Var<T> ref, std::vector<T> periods) {
  require_rank(x, 2, "wrap_near");
  if (ref.shape() != x.shape()) throw_shape_mismatch("wrap_near input vs reference", x.shape(), ref.shape());
  const std::size_t batch = x.dim(0), d = x.dim(1);
  if (periods.size() != d) throw_shape_mismatch("wrap_near input vs periods", x.shape(), Shape{periods.size()});
  Tensor<T> y = x.value();
  const auto& r = ref.value().data;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < d; ++i)
      if (periods[i] > T(0)) {
        T& v = y.data[b * d + i];
        v -= periods[i] * std::round((v - r[b * d + i]) / periods[i]);
      }
  const std::size_t xi = x.id, n = batch * d;
  // The shift is piecewise constant: identity gradient to x, none to ref.
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    for (std::size_t k = 0; k < n; ++k) gx[k] += g.data[k];
  });
}

// -- structure -------------------------------------------------------------------

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw InvalidArgument("concat: no inputs");
  const std::size_t batch = xs[0].shape().at(0);
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const auto& v : xs) {
    require_rank(v, 2, "concat");
    if (v.dim(0) != batch) throw_shape_mismatch("concat batch sizes", xs[0].shape(), v.shape());
    widths.push_back(v.dim(1));
    ids.push_back(v.id);
    total += v.dim(1);
  }
  Tensor<T> y({batch, total});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const T* src = xs[k].value().ptr() + b * widths[k];
      std::copy(src, src + widths[k], y.ptr() + b * total + off);
      off += widths[k];
    }
  }
  return tape_of(xs[0]).record(std::move(y), xs, [=](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (T* gx = t.grad_buffer(ids[k])) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < widths[k]; ++i) gx[b * widths[k] + i] += g.data[b * total + off + i];
      }
      off += widths[k];
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) throw_shape_mismatch("reshape", x.shape(), shape);
  Tensor<T> y(std::move(shape), x.value().data);
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g.data[i];
  });
}

template <class T>
Var<T> flatten(Var<T> x) {
  if (x.shape().empty()) throw ShapeError("flatten: rank-0 input");
  const std::size_t batch = x.dim(0);
  return reshape(x, Shape{batch, x.value().size() / std::max<std::size_t>(batch, 1)});
}

template <class T>
Var<T> select_columns(Var<T> x, std::vector<std::size_t> columns) {
  require_rank(x, 2, "select_columns");
  const std::size_t batch = x.dim(0), m = x.dim(1), p = columns.size();
  for (std::size_t c : columns) {
    if (c >= m) throw ShapeError("select_columns: column " + std::to_string(c) + " outside shape " + shape_str(x.shape()));
  }
  Tensor<T> y({batch, p});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < p; ++i) y.data[b * p + i] = x.value().data[b * m + columns[i]];
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < p; ++i) gx[b * m + columns[i]] += g.data[b * p + i];
  });
}

template <class T>
Var<T> batched_matvec(Var<T> k, Var<T> v) {
  require_rank(k, 3, "batched_matvec");
  require_rank(v, 2, "batched_matvec");
  const std::size_t batch = k.dim(0), m = k.dim(1), p = k.dim(2);
  if (v.dim(0) != batch || v.dim(1) != p) throw_shape_mismatch("batched_matvec matrix vs vector", k.shape(), v.shape());
  Tensor<T> y({batch, m});
  const T* kv = k.value().ptr();
  const T* vv = v.value().ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < p; ++j) acc += kv[(b * m + i) * p + j] * vv[b * p + j];
      y.data[b * m + i] = acc;
    }
  const std::size_t ki = k.id, vi = v.id;
  return tape_of(k).record(std::move(y), {k, v}, [=](Tape<T>& t, const Tensor<T>& g) {
    const T* kvals = t.value(ki).ptr();
    const T* vvals = t.value(vi).ptr();
    T* gk = t.grad_buffer(ki);
    T* gv = t.grad_buffer(vi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < m; ++i) {
        const T gi = g.data[b * m + i];
        for (std::size_t j = 0; j < p; ++j) {
          if (gk) gk[(b * m + i) * p + j] += gi * vvals[b * p + j];
          if (gv) gv[b * p + j] += gi * kvals[(b * m + i) * p + j];
        }
      }
  });
}

template <class T>
Var<T> normalize_with_norm(Var<T> x, double eps) {
  require_rank(x, 2, "normalize_with_norm");
  const std::size_t batch = x.dim(0), d = x.dim(1);
  Tensor<T> y({batch, d + 1});
  auto norms = std::make_shared<std::vector<T>>(batch);
  const T* xv = x.value().ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    double sq = eps * eps;
    for (std::size_t i = 0; i < d; ++i) sq += static_cast<double>(xv[b * d + i]) * xv[b * d + i];
    const T n = static_cast<T>(std::sqrt(sq));
    (*norms)[b] = n;
    for (std::size_t i = 0; i < d; ++i) y.data[b * (d + 1) + i] = xv[b * d + i] / n;
    y.data[b * (d + 1) + d] = n;
  }
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    const T* xs = t.value(xi).ptr();
    for (std::size_t b = 0; b < batch; ++b) {
      const T n = (*norms)[b];
      // u = x/n, dn/dx = x/n; du_i/dx_j = delta_ij/n - x_i x_j / n^3.
      T dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += g.data[b * (d + 1) + i] * xs[b * d + i];
      const T gn = g.data[b * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) {
        const T xj = xs[b * d + j];
        gx[b * d + j] += g.data[b * (d + 1) + j] / n - xj * dot / (n * n * n) + gn * xj / n;
      }
    }
  });
}

template <class T>
Var<T> map_rows(Var<T> x, RowFunction f) {
  require_rank(x, 2, "map_rows");
  const std::size_t batch = x.dim(0);
  if (x.dim(1) != f.in) throw_shape_mismatch("map_rows input", x.shape(), Shape{batch, f.in});
  if (!f.eval || !f.jacobian) throw InvalidArgument("map_rows: eval and jacobian must be set");
  Tensor<T> y({batch, f.out});
  std::vector<double> xin(f.in), yout(f.out);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < f.in; ++i) xin[i] = x.value().data[b * f.in + i];
    f.eval(xin.data(), yout.data());
    for (std::size_t i = 0; i < f.out; ++i) y.data[b * f.out + i] = static_cast<T>(yout[i]);
  }
  const std::size_t xi = x.id;
  return tape_of(x).record(std::move(y), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    const T* xs = t.value(xi).ptr();
    std::vector<double> xrow(f.in), jac(f.out * f.in);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < f.in; ++i) xrow[i] = xs[b * f.in + i];
      f.jacobian(xrow.data(), jac.data());
      for (std::size_t j = 0; j < f.in; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < f.out; ++i) acc += jac[i * f.in + j] * g.data[b * f.out + i];
        gx[b * f.in + j] += static_cast<T>(acc);
      }
    }
  });
}

// -- reductions ------------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data) acc += v;
  const std::size_t xi = x.id;
  return tape_of(x).record(Tensor<T>::scalar(acc), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xi);
    const std::size_t n = t.value(xi).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g.data[0];
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  if (x.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <class T>
Var<T> sse(Var<T> a, Var<T> b) {
  require_same(a, b, "sse");
  T acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const T d = a.value().data[i] - b.value().data[i];
    acc += d * d;
  }
  const std::size_t ai = a.id, bi = b.id;
  return tape_of(a).record(Tensor<T>::scalar(acc), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(ai).data;
    const auto& bv = t.value(bi).data;
    T* ga = t.grad_buffer(ai);
    T* gb = t.grad_buffer(bi);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = T(2) * (av[i] - bv[i]) * g.data[0];
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  if (a.value().size() == 0) throw ShapeError("mse of empty tensors");
  return scale(sse(a, b), T(1) / static_cast<T>(a.value().size()));
}

// -- recurrent cell ----------------------------------------------------------------

template <class T>
Var<T> gru_cell(Var<T> x, Var<T> h, const GruVars<T>& g) {
  Var<T> z = sigmoid(add(dense(x, g.w[0], g.b[0]), linear(h, g.u[0])));
  Var<T> r = sigmoid(add(dense(x, g.w[1], g.b[1]), linear(h, g.u[1])));
  Var<T> n = tanh(add(dense(x, g.w[2], g.b[2]), linear(mul(r, h), g.u[2])));
  return add(h, mul(z, sub(n, h)));
}

namespace {
constexpr const char* kGateNames[3] = {"z", "r", "n"};
}

template <class T>
void add_gru_params(ParamSet<T>& set, const std::string& prefix, std::size_t in, std::size_t hidden) {
  for (const char* gate : kGateNames) set.add(prefix + ".w_" + gate, {hidden, in});
  for (const char* gate : kGateNames) set.add(prefix + ".u_" + gate, {hidden, hidden});
  for (const char* gate : kGateNames) set.add(prefix + ".b_" + gate, {hidden});
}

template <class T>
GruVars<T> gru_vars(Tape<T>& tape, ParamSet<T>& set, const std::string& prefix) {
  GruVars<T> g;
  for (int k = 0; k < 3; ++k) {
    g.w[k] = tape.param(set, prefix + ".w_" + kGateNames[k]);
    g.u[k] = tape.param(set, prefix + ".u_" + kGateNames[k]);
    g.b[k] = tape.param(set, prefix + ".b_" + kGateNames[k]);
  }
  return g;
}

template <class T>
void init_uniform(Parameter<T>& p, std::size_t fan_in, std::mt19937_64& rng, double gain) {
  const double bound = gain * std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : p.value.data) v = static_cast<T>(dist(rng));
}

#define LKF_INSTANTIATE(T)                                                                                   \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                                                          \
  template Var<T> linear<T>(Var<T>, Var<T>);                                                                 \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                               \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, const BatchNormOptions&); \
  template Var<T> relu<T>(Var<T>);                                                                           \
  template Var<T> tanh<T>(Var<T>);                                                                           \
  template Var<T> sigmoid<T>(Var<T>);                                                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> scale<T>(Var<T>, T);                                                                       \
  template Var<T> affine_columns<T>(Var<T>, std::vector<T>, std::vector<T>);                                 \
  template Var<T> wrap_near<T>(Var<T>, Var<T>, std::vector<T>);                                             \
  template Var<T> concat<T>(const std::vector<Var<T>>&);                                                     \
  template Var<T> reshape<T>(Var<T>, Shape);                                                                 \
  template Var<T> flatten<T>(Var<T>);                                                                        \
  template Var<T> select_columns<T>(Var<T>, std::vector<std::size_t>);                                       \
  template Var<T> batched_matvec<T>(Var<T>, Var<T>);                                                         \
  template Var<T> normalize_with_norm<T>(Var<T>, double);                                                    \
  template Var<T> map_rows<T>(Var<T>, RowFunction);                                                          \
  template Var<T> sum<T>(Var<T>);                                                                            \
  template Var<T> mean<T>(Var<T>);                                                                           \
  template Var<T> sse<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> mse<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> gru_cell<T>(Var<T>, Var<T>, const GruVars<T>&);                                            \
  template void add_gru_params<T>(ParamSet<T>&, const std::string&, std::size_t, std::size_t);               \
  template GruVars<T> gru_vars<T>(Tape<T>&, ParamSet<T>&, const std::string&);                               \
  template void init_uniform<T>(Parameter<T>&, std::size_t, std::mt19937_64&, double);

LKF_INSTANTIATE(float)
LKF_INSTANTIATE(double)

#undef LKF_INSTANTIATE

}  // namespace latentkf::ad
