#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "wrel/nn/gemm.hpp"

namespace wrel::nn {

/// Geometry of a 2-D convolution over a CHW tensor.
struct ConvShape {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

namespace detail {
// Output columns ox such that 0 <= ox*stride + offset < width.
inline void valid_range(int offset, int stride, int width, int out_width, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = std::min(out_width, (width - 1 - offset) / stride + 1);
  if (width - 1 - offset < 0) hi = 0;
}
}  // namespace detail

namespace detail {

template <typename T>
void im2col(const ConvShape& s, const T* in, T* col) {
  const int ho = s.out_height(), wo = s.out_width();
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < s.in_channels; ++ci)
    for (int ky = 0; ky < s.kernel; ++ky)
      for (int kx = 0; kx < s.kernel; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ci * s.kernel + ky) * s.kernel + kx) * plane_out;
        std::fill(dst, dst + plane_out, T(0));
        int y_lo, y_hi, x_lo, x_hi;
        valid_range(ky - s.pad, s.stride, s.height, ho, y_lo, y_hi);
        valid_range(kx - s.pad, s.stride, s.width, wo, x_lo, x_hi);
        const T* src = in + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int oy = y_lo; oy < y_hi; ++oy) {
          const T* row = src + (oy * s.stride + ky - s.pad) * s.width + (kx - s.pad);
          T* drow = dst + oy * wo;
          for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] = row[ox * s.stride];
        }
      }
}

template <typename T>
void col2im(const ConvShape& s, const T* col, T* in) {
  const int ho = s.out_height(), wo = s.out_width();
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < s.in_channels; ++ci)
    for (int ky = 0; ky < s.kernel; ++ky)
      for (int kx = 0; kx < s.kernel; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ci * s.kernel + ky) * s.kernel + kx) * plane_out;
        int y_lo, y_hi, x_lo, x_hi;
        valid_range(ky - s.pad, s.stride, s.height, ho, y_lo, y_hi);
        valid_range(kx - s.pad, s.stride, s.width, wo, x_lo, x_hi);
        T* dst = in + static_cast<std::size_t>(ci) * s.height * s.width;
        for (int oy = y_lo; oy < y_hi; ++oy) {
          T* row = dst + (oy * s.stride + ky - s.pad) * s.width + (kx - s.pad);
          const T* srow = src + oy * wo;
          for (int ox = x_lo; ox < x_hi; ++ox) row[ox * s.stride] += srow[ox];
        }
      }
}

inline bool is_pointwise(const ConvShape& s) { return s.kernel == 1 && s.stride == 1 && s.pad == 0; }

}  // namespace detail

/// out[co] = bias[co] + sum_ci W[co][ci] * in[ci]   (cross-correlation, zero padding)
template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const int P = s.out_height() * s.out_width();
  const int K = s.in_channels * s.kernel * s.kernel;
  for (int co = 0; co < s.out_channels; ++co)
    std::fill(out.data() + static_cast<std::size_t>(co) * P, out.data() + static_cast<std::size_t>(co + 1) * P,
              bias[co]);
  if (detail::is_pointwise(s)) {
    gemm_nn(s.out_channels, P, K, weight.data(), in.data(), out.data());
    return;
  }
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  detail::im2col(s, in.data(), col.data());
  gemm_nn(s.out_channels, P, K, weight.data(), col.data(), out.data());
}

/// Accumulates gradients. Any of grad_in / grad_weight / grad_bias may be empty to skip it.
template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const int P = s.out_height() * s.out_width();
  const int K = s.in_channels * s.kernel * s.kernel;
  if (!grad_bias.empty())
    for (int co = 0; co < s.out_channels; ++co) {
      const T* g = grad_out.data() + static_cast<std::size_t>(co) * P;
      T acc = 0;
      for (int i = 0; i < P; ++i) acc += g[i];
      grad_bias[co] += acc;
    }
  const bool pointwise = detail::is_pointwise(s);
  std::vector<T> col;
  if (!grad_weight.empty()) {
    const T* cols = in.data();
    if (!pointwise) {
      col.resize(static_cast<std::size_t>(K) * P);
      detail::im2col(s, in.data(), col.data());
      cols = col.data();
    }
    gemm_nt(s.out_channels, K, P, grad_out.data(), cols, grad_weight.data());
  }
  if (!grad_in.empty()) {
    if (pointwise) {
      gemm_tn(K, P, s.out_channels, weight.data(), grad_out.data(), grad_in.data());
    } else {
      std::vector<T> gcol(static_cast<std::size_t>(K) * P, T(0));
      gemm_tn(K, P, s.out_channels, weight.data(), grad_out.data(), gcol.data());
      detail::col2im(s, gcol.data(), grad_in.data());
    }
  }
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
/// Weight layout [in][out][2][2].
struct Upsample2Shape {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  std::size_t weight_size() const {
    return static_cast<std::size_t>(in_channels) * out_channels * 4;
  }
};

template <typename T>
void upconv2_forward(const Upsample2Shape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> bias, std::span<T> out) {
  const int P = s.height * s.width, J = s.out_channels * 4, wo = 2 * s.width;
  // blocks[(co*4 + d)][p] = sum_ci W[ci][co][d] * in[ci][p]
  std::vector<T> blocks(static_cast<std::size_t>(J) * P, T(0));
  gemm_tn(J, P, s.in_channels, weight.data(), in.data(), blocks.data());
  for (int co = 0; co < s.out_channels; ++co) {
    T* o = out.data() + static_cast<std::size_t>(co) * 4 * P;
    const T* b0 = blocks.data() + static_cast<std::size_t>(co * 4) * P;
    const T* b1 = b0 + P;
    const T* b2 = b1 + P;
    const T* b3 = b2 + P;
    const T bias_v = bias[co];
    for (int y = 0; y < s.height; ++y) {
      T* top = o + (2 * y) * wo;
      T* bottom = top + wo;
      for (int x = 0; x < s.width; ++x) {
        const int p = y * s.width + x;
        top[2 * x] = bias_v + b0[p];
        top[2 * x + 1] = bias_v + b1[p];
        bottom[2 * x] = bias_v + b2[p];
        bottom[2 * x + 1] = bias_v + b3[p];
      }
    }
  }
}

template <typename T>
void upconv2_backward(const Upsample2Shape& s, std::span<const T> in, std::span<const T> weight,
                      std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                      std::span<T> grad_bias) {
  const int P = s.height * s.width, J = s.out_channels * 4, wo = 2 * s.width;
  std::vector<T> gblocks(static_cast<std::size_t>(J) * P);
  for (int co = 0; co < s.out_channels; ++co) {
    const T* g = grad_out.data() + static_cast<std::size_t>(co) * 4 * P;
    T* b0 = gblocks.data() + static_cast<std::size_t>(co * 4) * P;
    T* b1 = b0 + P;
    T* b2 = b1 + P;
    T* b3 = b2 + P;
    T acc = 0;
    for (int y = 0; y < s.height; ++y) {
      const T* top = g + (2 * y) * wo;
      const T* bottom = top + wo;
      for (int x = 0; x < s.width; ++x) {
        const int p = y * s.width + x;
        b0[p] = top[2 * x];
        b1[p] = top[2 * x + 1];
        b2[p] = bottom[2 * x];
        b3[p] = bottom[2 * x + 1];
      }
    }
    if (!grad_bias.empty()) {
      for (int i = 0; i < 4 * P; ++i) acc += g[i];
      grad_bias[co] += acc;
    }
  }
  // dW (in x J) += in (in x P) * gblocks^T
  if (!grad_weight.empty()) gemm_nt(s.in_channels, J, P, in.data(), gblocks.data(), grad_weight.data());
  // d in (in x P) += W (in x J) * gblocks (J x P)
  if (!grad_in.empty()) gemm_nn(s.in_channels, P, J, weight.data(), gblocks.data(), grad_in.data());
}

template <typename T>
void relu_inplace(std::span<T> x) {
  for (auto& v : x) v = v > T(0) ? v : T(0);
}

/// grad *= 1[activation > 0], where `activation` is the ReLU output.
template <typename T>
void relu_backward(std::span<const T> activation, std::span<T> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > T(0))) grad[i] = T(0);
}

}  // namespace wrel::nn
