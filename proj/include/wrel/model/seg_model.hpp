#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/nn/layers.hpp"
#include "wrel/nn/params.hpp"

namespace wrel::model {

struct SegDims {
  int grid = 48;  // H == W, divisible by 4
  int ref_dim = 32;
  int conv1 = 16;
  int conv2 = 32;
  int fused = 32;
  int up1 = 16;
  int kernel = 3;
};

/// Image planes fed to the first convolution: RGB shifted to [-0.5, 0.5]
/// plus two normalized coordinate planes.
inline constexpr int kInputChannels = 5;

/// Toy referring segmenter: two stride-2 conv blocks, fusion of the
/// referring embedding by broadcast-concatenation + 1x1 conv, and two 2x
/// transposed-conv blocks back to one logit per pixel.
template <typename T>
class SegModel {
 public:
  /// Activations of the image branch; independent of r.
  struct ImageFeatures {
    std::vector<T> input, act1, act2;
  };
  struct DecodeCache {
    std::vector<T> fused, act_up1;
  };

  SegModel() = default;
  SegModel(nn::ParamSet<T>& params, SegDims dims) : dims_(dims) {
    if (dims.grid < 4 || dims.grid % 4 != 0) throw ConfigError("grid size must be a positive multiple of 4");
    const auto u = [](int v) { return static_cast<std::size_t>(v); };
    const auto k = u(dims.kernel);
    conv1_w_ = params.add("seg.conv1.w", {u(dims.conv1), u(kInputChannels), k, k});
    conv1_b_ = params.add("seg.conv1.b", {u(dims.conv1)});
    conv2_w_ = params.add("seg.conv2.w", {u(dims.conv2), u(dims.conv1), k, k});
    conv2_b_ = params.add("seg.conv2.b", {u(dims.conv2)});
    fuse_w_ = params.add("seg.fuse.w", {u(dims.fused), u(dims.conv2)});
    fuse_u_ = params.add("seg.fuse.u", {u(dims.fused), u(dims.ref_dim)});
    fuse_b_ = params.add("seg.fuse.b", {u(dims.fused)});
    up1_w_ = params.add("seg.up1.w", {u(dims.fused), u(dims.up1), 2, 2});
    up1_b_ = params.add("seg.up1.b", {u(dims.up1)});
    up2_w_ = params.add("seg.up2.w", {u(dims.up1), 1, 2, 2});
    up2_b_ = params.add("seg.up2.b", {1});
  }

  const SegDims& dims() const { return dims_; }
  int pixels() const { return dims_.grid * dims_.grid; }

  void init(nn::ParamSet<T>& params, Rng& rng) const {
    const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
    const int kk = dims_.kernel * dims_.kernel;
    nn::init_normal(params[conv1_w_], he(kInputChannels * kk), rng);
    nn::init_normal(params[conv2_w_], he(dims_.conv1 * kk), rng);
    nn::init_normal(params[fuse_w_], he(dims_.conv2 + dims_.ref_dim), rng);
    nn::init_normal(params[fuse_u_], he(dims_.conv2 + dims_.ref_dim), rng);
    nn::init_normal(params[up1_w_], he(dims_.fused), rng);
    nn::init_normal(params[up2_w_], he(dims_.up1), rng);
  }

  /// `rgb` is H x W x 3 interleaved, values in [0, 1].
  ImageFeatures encode_image(const nn::ParamSet<T>& params, std::span<const float> rgb) const {
    const int g = dims_.grid, hw = g * g;
    if (rgb.size() != static_cast<std::size_t>(hw) * 3) throw ConfigError("image does not match model grid size");
    ImageFeatures f;
    f.input.resize(static_cast<std::size_t>(kInputChannels) * hw);
    for (int p = 0; p < hw; ++p)
      for (int c = 0; c < 3; ++c) f.input[c * hw + p] = static_cast<T>(rgb[p * 3 + c]) - T(0.5);
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        f.input[3 * hw + y * g + x] = static_cast<T>(2.0 * x / (g - 1) - 1.0);
        f.input[4 * hw + y * g + x] = static_cast<T>(2.0 * y / (g - 1) - 1.0);
      }
    const auto c1 = conv1_shape(), c2 = conv2_shape();
    f.act1.assign(static_cast<std::size_t>(c1.out_channels) * c1.out_height() * c1.out_width(), T(0));
    nn::conv2d_forward<T>(c1, f.input, params[conv1_w_], params[conv1_b_], f.act1);
    nn::relu_inplace<T>(f.act1);
    f.act2.assign(static_cast<std::size_t>(c2.out_channels) * c2.out_height() * c2.out_width(), T(0));
    nn::conv2d_forward<T>(c2, f.act1, params[conv2_w_], params[conv2_b_], f.act2);
    nn::relu_inplace<T>(f.act2);
    return f;
  }

  /// Fusion + decoder: logits H x W.
  std::vector<T> decode(const nn::ParamSet<T>& params, const ImageFeatures& f, std::span<const T> r,
                        DecodeCache* cache = nullptr) const {
    if (r.size() != static_cast<std::size_t>(dims_.ref_dim)) throw ConfigError("referring embedding has wrong size");
    DecodeCache local;
    DecodeCache& c = cache ? *cache : local;
    const auto fs = fuse_shape();
    const int q = dims_.grid / 4, plane = q * q;
    std::vector<T> bias(params[fuse_b_].begin(), params[fuse_b_].end());
    const auto u = params[fuse_u_];
    for (int o = 0; o < dims_.fused; ++o)
      for (int e = 0; e < dims_.ref_dim; ++e) bias[o] += u[o * dims_.ref_dim + e] * r[e];
    c.fused.assign(static_cast<std::size_t>(dims_.fused) * plane, T(0));
    nn::conv2d_forward<T>(fs, f.act2, params[fuse_w_], bias, c.fused);
    nn::relu_inplace<T>(c.fused);
    const auto s1 = up1_shape(), s2 = up2_shape();
    c.act_up1.assign(static_cast<std::size_t>(dims_.up1) * 4 * plane, T(0));
    nn::upconv2_forward<T>(s1, c.fused, params[up1_w_], params[up1_b_], c.act_up1);
    nn::relu_inplace<T>(c.act_up1);
    std::vector<T> logits(static_cast<std::size_t>(pixels()), T(0));
    nn::upconv2_forward<T>(s2, c.act_up1, params[up2_w_], params[up2_b_], logits);
    return logits;
  }

  std::vector<T> forward(const nn::ParamSet<T>& params, std::span<const float> rgb, std::span<const T> r) const {
    return decode(params, encode_image(params, rgb), r);
  }

  /// Backward through decoder and fusion. Accumulates into `grads` (may be
  /// null), `grad_r` (may be empty) and returns dL/d act2 when
  /// `want_image_grad` (needed only to continue into the image branch).
  std::vector<T> decode_backward(const nn::ParamSet<T>& params, const ImageFeatures& f, const DecodeCache& c,
                                 std::span<const T> r, std::span<const T> grad_logits, nn::ParamSet<T>* grads,
                                 std::span<T> grad_r, bool want_image_grad) const {
    const auto s1 = up1_shape(), s2 = up2_shape();
    const int q = dims_.grid / 4, plane = q * q;
    std::span<T> none;
    std::vector<T> g_up1(c.act_up1.size(), T(0));
    nn::upconv2_backward<T>(s2, c.act_up1, params[up2_w_], grad_logits, g_up1,
                            grads ? (*grads)[up2_w_] : none, grads ? (*grads)[up2_b_] : none);
    nn::relu_backward<T>(c.act_up1, g_up1);
    std::vector<T> g_fused(c.fused.size(), T(0));
    nn::upconv2_backward<T>(s1, c.fused, params[up1_w_], g_up1, g_fused, grads ? (*grads)[up1_w_] : none,
                            grads ? (*grads)[up1_b_] : none);
    nn::relu_backward<T>(c.fused, g_fused);

    std::vector<T> g_bias(static_cast<std::size_t>(dims_.fused), T(0));
    for (int o = 0; o < dims_.fused; ++o) {
      T s = 0;
      for (int p = 0; p < plane; ++p) s += g_fused[o * plane + p];
      g_bias[o] = s;
    }
    const auto u = params[fuse_u_];
    if (grads) {
      auto gb = (*grads)[fuse_b_];
      auto gu = (*grads)[fuse_u_];
      for (int o = 0; o < dims_.fused; ++o) {
        gb[o] += g_bias[o];
        for (int e = 0; e < dims_.ref_dim; ++e) gu[o * dims_.ref_dim + e] += g_bias[o] * r[e];
      }
    }
    if (!grad_r.empty())
      for (int o = 0; o < dims_.fused; ++o)
        for (int e = 0; e < dims_.ref_dim; ++e) grad_r[e] += u[o * dims_.ref_dim + e] * g_bias[o];

    std::vector<T> g_act2;
    if (grads || want_image_grad) {
      if (want_image_grad) g_act2.assign(f.act2.size(), T(0));
      nn::conv2d_backward<T>(fuse_shape(), f.act2, params[fuse_w_], g_fused,
                             want_image_grad ? std::span<T>(g_act2) : none, grads ? (*grads)[fuse_w_] : none,
                             none);
    }
    return g_act2;
  }

  void image_backward(const nn::ParamSet<T>& params, const ImageFeatures& f, std::vector<T> g_act2,
                      nn::ParamSet<T>& grads) const {
    std::span<T> none;
    nn::relu_backward<T>(f.act2, g_act2);
    std::vector<T> g_act1(f.act1.size(), T(0));
    nn::conv2d_backward<T>(conv2_shape(), f.act1, params[conv2_w_], g_act2, g_act1, grads[conv2_w_],
                           grads[conv2_b_]);
    nn::relu_backward<T>(f.act1, g_act1);
    nn::conv2d_backward<T>(conv1_shape(), f.input, params[conv1_w_], g_act1, none, grads[conv1_w_],
                           grads[conv1_b_]);
  }

  /// Full backward: parameter gradients into `grads` (may be null) and dL/dr into `grad_r` (may be empty).
  void backward(const nn::ParamSet<T>& params, const ImageFeatures& f, const DecodeCache& c, std::span<const T> r,
                std::span<const T> grad_logits, nn::ParamSet<T>* grads, std::span<T> grad_r) const {
    auto g_act2 = decode_backward(params, f, c, r, grad_logits, grads, grad_r, grads != nullptr);
    if (grads) image_backward(params, f, std::move(g_act2), *grads);
  }

 private:
  nn::ConvShape conv1_shape() const {
    return {kInputChannels, dims_.grid, dims_.grid, dims_.conv1, dims_.kernel, 2, dims_.kernel / 2};
  }
  nn::ConvShape conv2_shape() const {
    const int h = conv1_shape().out_height();
    return {dims_.conv1, h, h, dims_.conv2, dims_.kernel, 2, dims_.kernel / 2};
  }
  nn::ConvShape fuse_shape() const {
    const int q = dims_.grid / 4;
    return {dims_.conv2, q, q, dims_.fused, 1, 1, 0};
  }
  nn::Upsample2Shape up1_shape() const { return {dims_.fused, dims_.grid / 4, dims_.grid / 4, dims_.up1}; }
  nn::Upsample2Shape up2_shape() const { return {dims_.up1, dims_.grid / 2, dims_.grid / 2, 1}; }

  SegDims dims_;
  std::size_t conv1_w_ = 0, conv1_b_ = 0, conv2_w_ = 0, conv2_b_ = 0;
  std::size_t fuse_w_ = 0, fuse_u_ = 0, fuse_b_ = 0;
  std::size_t up1_w_ = 0, up1_b_ = 0, up2_w_ = 0, up2_b_ = 0;
};

}  // namespace wrel::model
