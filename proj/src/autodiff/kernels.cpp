// SPDX-License-Identifier: Apache-2.0
#include "latentkf/autodiff/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

namespace latentkf::ad::kernels {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using Vec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

auto idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace

template <class T>
void dense_forward(const T* x, const T* w, const T* bias, T* y, std::size_t batch, std::size_t in, std::size_t out) {
  CMap<T> X(x, idx(batch), idx(in));
  CMap<T> W(w, idx(out), idx(in));
  Map<T> Y(y, idx(batch), idx(out));
  Y.noalias() = X * W.transpose();
  if (bias) Y.rowwise() += CVec<T>(bias, idx(out)).transpose();
}

template <class T>
void dense_backward(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, std::size_t batch, std::size_t in,
                    std::size_t out) {
  CMap<T> GY(gy, idx(batch), idx(out));
  if (gx) Map<T>(gx, idx(batch), idx(in)).noalias() += GY * CMap<T>(w, idx(out), idx(in));
  if (gw) Map<T>(gw, idx(out), idx(in)).noalias() += GY.transpose() * CMap<T>(x, idx(batch), idx(in));
  if (gb) Vec<T>(gb, idx(out)) += GY.colwise().sum().transpose();
}

template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  const std::size_t positions = oh * ow;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * positions;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.height) && jj < static_cast<long>(g.width);
            row[oi * ow + oj] = inside ? plane[static_cast<std::size_t>(ii) * g.width + static_cast<std::size_t>(jj)] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  const std::size_t positions = oh * ow;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * positions;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          for (std::size_t oj = 0; oj < ow; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            if (jj < 0 || jj >= static_cast<long>(g.width)) continue;
            plane[static_cast<std::size_t>(ii) * g.width + static_cast<std::size_t>(jj)] += row[oi * ow + oj];
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, T* cols, std::size_t batch, const ConvGeometry& g) {
  const std::size_t patch = g.patch(), positions = g.positions();
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = g.out_channels * positions;
  CMap<T> W(w, idx(g.out_channels), idx(patch));
  for (std::size_t b = 0; b < batch; ++b) {
    T* c = cols + b * patch * positions;
    im2col(x + b * in_size, g, c);
    Map<T> Y(y + b * out_size, idx(g.out_channels), idx(positions));
    Y.noalias() = W * CMap<T>(c, idx(patch), idx(positions));
    if (bias) Y.colwise() += CVec<T>(bias, idx(g.out_channels));
  }
}

template <class T>
void conv2d_backward(const T* cols, const T* w, const T* gy, T* gx, T* gw, T* gb, std::size_t batch,
                     const ConvGeometry& g) {
  const std::size_t patch = g.patch(), positions = g.positions();
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = g.out_channels * positions;
  CMap<T> W(w, idx(g.out_channels), idx(patch));
  RowMat<T> gcols;
  for (std::size_t b = 0; b < batch; ++b) {
    CMap<T> GY(gy + b * out_size, idx(g.out_channels), idx(positions));
    CMap<T> C(cols + b * patch * positions, idx(patch), idx(positions));
    if (gw) Map<T>(gw, idx(g.out_channels), idx(patch)).noalias() += GY * C.transpose();
    if (gb) Vec<T>(gb, idx(g.out_channels)) += GY.rowwise().sum();
    if (gx) {
      gcols.noalias() = W.transpose() * GY;
      col2im(gcols.data(), g, gx + b * in_size);
    }
  }
}

template <class T>
void batch_norm_infer(const T* x, const T* mean, const T* var, const T* gamma, const T* beta, T* y,
                      std::size_t batch, std::size_t channels, std::size_t length, double eps) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T scale = gamma[c] / static_cast<T>(std::sqrt(static_cast<double>(var[c]) + eps));
    const T shift = beta[c] - mean[c] * scale;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * length;
      for (std::size_t l = 0; l < length; ++l) y[off + l] = x[off + l] * scale + shift;
    }
  }
}

template <class T>
void relu_inplace(T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void gru_forward_single(const T* x, const T* h, const T* const* w, const T* const* u, const T* const* b, T* h_out,
                        std::size_t in, std::size_t hidden, T* scratch) {
  CVec<T> X(x, idx(in));
  CVec<T> H(h, idx(hidden));
  Vec<T> z(scratch, idx(hidden));
  Vec<T> r(scratch + hidden, idx(hidden));
  Vec<T> n(scratch + 2 * hidden, idx(hidden));
  Vec<T> rh(scratch + 3 * hidden, idx(hidden));
  auto Wm = [&](int k) { return CMap<T>(w[k], idx(hidden), idx(in)); };
  auto Um = [&](int k) { return CMap<T>(u[k], idx(hidden), idx(hidden)); };
  z.noalias() = Wm(0) * X;
  z.noalias() += Um(0) * H;
  z += CVec<T>(b[0], idx(hidden));
  r.noalias() = Wm(1) * X;
  r.noalias() += Um(1) * H;
  r += CVec<T>(b[1], idx(hidden));
  for (std::size_t i = 0; i < hidden; ++i) {
    z[idx(i)] = sigmoid(z[idx(i)]);
    r[idx(i)] = sigmoid(r[idx(i)]);
  }
  rh = r.cwiseProduct(H);
  n.noalias() = Wm(2) * X;
  n.noalias() += Um(2) * rh;
  n += CVec<T>(b[2], idx(hidden));
  for (std::size_t i = 0; i < hidden; ++i) {
    const T nn = std::tanh(n[idx(i)]);
    h_out[i] = h[i] + z[idx(i)] * (nn - h[i]);
  }
}

#define LKF_INSTANTIATE(T)                                                                                      \
  template void dense_forward<T>(const T*, const T*, const T*, T*, std::size_t, std::size_t, std::size_t);     \
  template void dense_backward<T>(const T*, const T*, const T*, T*, T*, T*, std::size_t, std::size_t,          \
                                  std::size_t);                                                                 \
  template void im2col<T>(const T*, const ConvGeometry&, T*);                                                   \
  template void col2im<T>(const T*, const ConvGeometry&, T*);                                                   \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, T*, std::size_t, const ConvGeometry&);      \
  template void conv2d_backward<T>(const T*, const T*, const T*, T*, T*, T*, std::size_t, const ConvGeometry&); \
  template void batch_norm_infer<T>(const T*, const T*, const T*, const T*, const T*, T*, std::size_t,          \
                                    std::size_t, std::size_t, double);                                          \
  template void relu_inplace<T>(T*, std::size_t);                                                               \
  template void gru_forward_single<T>(const T*, const T*, const T* const*, const T* const*, const T* const*, T*, \
                                      std::size_t, std::size_t, T*);

LKF_INSTANTIATE(float)
LKF_INSTANTIATE(double)

#undef LKF_INSTANTIATE

}  // namespace latentkf::ad::kernels
