#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/lrb/calibrate.hpp"
#include "wrel/model/example.hpp"
#include "wrel/model/loss.hpp"
#include "wrel/model/network.hpp"

namespace wrel::model {

/// How the referring embedding of an example is built and whether the text
/// path receives gradient.
enum class TextPath {
  kEncode,        // Encode(X, A), gradient into enc.*
  kEnhance,       // Encode(Fill(X, A; P_j)), gradient into enc.* but not P_j
  kStopEnhance,   // sg[Encode(Fill(X, A; P_j))]: constant r, only seg.* learns
};

/// Loss of one example; when `grads` is set, scale * dloss/dtheta is accumulated into it.
template <typename T>
T example_loss(const Network<T>& net, const Example& ex, TextPath path, std::span<const T> prompt, int prompts,
               T scale, nn::ParamSet<T>* grads) {
  const auto seq = net.encoder.embed(net.params, ex.tokens);
  typename text::TextEncoder<T>::Cache enc_cache;
  lrb::FillResult<T> filled;
  const text::TokenSequence<T>* used = &seq;
  if (path != TextPath::kEncode) {
    filled = lrb::fill(seq, prompt, prompts);
    used = &filled.seq;
  }
  const auto r = net.encoder.encode(net.params, *used, &enc_cache);
  const auto features = net.seg.encode_image(net.params, ex.image);
  typename SegModel<T>::DecodeCache dec_cache;
  const auto logits = net.seg.decode(net.params, features, r, &dec_cache);
  const T loss = seg_loss<T>(logits, ex.mask);
  if (!grads) return loss;
  std::vector<T> g_logits(logits.size());
  seg_loss_grad<T>(logits, ex.mask, scale, g_logits);
  const bool text_grad = path != TextPath::kStopEnhance;
  std::vector<T> g_r(text_grad ? r.size() : 0, T(0));
  net.seg.backward(net.params, features, dec_cache, r, g_logits, grads, g_r);
  if (text_grad) {
    std::vector<T> g_x(used->x.size(), T(0));
    net.encoder.encode_backward(net.params, *used, enc_cache, g_r, grads, g_x);
    // Filled slots have A = 0 in the original tokens, so their gradient never reaches the table.
    net.encoder.embed_backward(ex.tokens, g_x, *grads);
  }
  return loss;
}

/// (1/|S|) sum_S l + lambda (1/|W|) sum_W l. Weak terms use the bank's
/// enhanced embeddings when `bank` is set, the plain encoding otherwise.
/// An empty side contributes nothing; both empty is an error.
template <typename T>
T mixed_loss(const Network<T>& net, std::span<const Example> batch, const lrb::PromptBank<T>* bank, double lambda,
             nn::ParamSet<T>* grads = nullptr) {
  std::size_t n_s = 0, n_w = 0;
  for (const auto& ex : batch) (ex.weak ? n_w : n_s)++;
  if (n_s + n_w == 0) throw ConfigError("mixed loss needs at least one sample");
  T total = 0;
  for (const auto& ex : batch) {
    const T scale = ex.weak ? static_cast<T>(lambda / n_w) : T(1) / static_cast<T>(n_s);
    T l;
    if (ex.weak && bank)
      l = example_loss<T>(net, ex, TextPath::kEnhance, bank->row(ex.id), bank->prompts(), scale, grads);
    else
      l = example_loss<T>(net, ex, TextPath::kEncode, {}, 0, scale, grads);
    total += scale * l;
  }
  return total;
}

}  // namespace wrel::model
