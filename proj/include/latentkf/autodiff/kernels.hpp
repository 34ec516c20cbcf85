// SPDX-License-Identifier: Apache-2.0
//
// Raw forward/backward kernels over row-major buffers. Shared by the tape ops
// and the allocation-free inference paths so both produce identical numbers.
#pragma once

#include <cstddef>

namespace latentkf::ad::kernels {

struct ConvGeometry {
  std::size_t channels, height, width;  // input
  std::size_t out_channels, kernel, stride, padding;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height() * out_width(); }
};

/// y[b] = W x[b] + bias; x (B,in), W (out,in), y (B,out). bias may be null.
template <class T>
void dense_forward(const T* x, const T* w, const T* bias, T* y, std::size_t batch, std::size_t in, std::size_t out);
/// Accumulates into gx (B,in), gw (out,in), gb (out); any may be null.
template <class T>
void dense_backward(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb, std::size_t batch, std::size_t in,
                    std::size_t out);

/// One image (C,H,W) to columns (C*k*k, OH*OW).
template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols);
/// Scatter-add of columns back onto an image gradient.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* image);

/// y (B,O,OH,OW) from x (B,C,H,W); `cols` holds B*patch*positions scratch kept for backward.
template <class T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, T* cols, std::size_t batch, const ConvGeometry& g);
template <class T>
void conv2d_backward(const T* cols, const T* w, const T* gy, T* gx, T* gw, T* gb, std::size_t batch,
                     const ConvGeometry& g);

/// Per-channel affine with fixed statistics over x (B,C,L).
template <class T>
void batch_norm_infer(const T* x, const T* mean, const T* var, const T* gamma, const T* beta, T* y,
                      std::size_t batch, std::size_t channels, std::size_t length, double eps);

template <class T>
void relu_inplace(T* x, std::size_t n);

/// Gated recurrent step for a single sample, fused.
/// h' = (1 - z) h + z n with z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r h) + bn). `scratch` needs 4*hidden entries.
template <class T>
void gru_forward_single(const T* x, const T* h, const T* const* w, const T* const* u, const T* const* b, T* h_out,
                        std::size_t in, std::size_t hidden, T* scratch);

}  // namespace latentkf::ad::kernels
