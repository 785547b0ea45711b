#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/lrb/bank.hpp"
#include "wrel/model/example.hpp"
#include "wrel/model/loss.hpp"
#include "wrel/model/network.hpp"

namespace wrel::lrb {

/// r-tilde = Encode(Fill(X, A; P_j)) with X embedded by `net`.
template <typename T>
std::vector<T> enhance(const model::Network<T>& net, const text::Tokens& tokens, std::span<const T> prompt,
                       int prompts) {
  const auto seq = net.encoder.embed(net.params, tokens);
  return net.encoder.encode(net.params, fill(seq, prompt, prompts).seq);
}

template <typename T>
struct PromptGradient {
  T loss = 0;
  std::vector<T> grad;
  std::vector<T> logits;
  std::optional<FillWarning> warning;
};

/// Loss and scale * dLoss/dP_j of one weak example; `net` is only read.
template <typename T>
PromptGradient<T> prompt_gradient(const model::Network<T>& net, const text::TokenSequence<T>& seq,
                                  const typename model::SegModel<T>::ImageFeatures& features,
                                  std::span<const std::uint8_t> mask, std::span<const T> prompt, int prompts,
                                  T scale) {
  PromptGradient<T> out;
  const auto filled = fill(seq, prompt, prompts);
  out.warning = filled.warning;
  typename text::TextEncoder<T>::Cache enc_cache;
  const auto r = net.encoder.encode(net.params, filled.seq, &enc_cache);
  typename model::SegModel<T>::DecodeCache dec_cache;
  out.logits = net.seg.decode(net.params, features, r, &dec_cache);
  out.loss = model::seg_loss<T>(out.logits, mask);
  std::vector<T> g_logits(out.logits.size());
  model::seg_loss_grad<T>(out.logits, mask, scale, g_logits);
  std::vector<T> g_r(r.size(), T(0));
  net.seg.decode_backward(net.params, features, dec_cache, r, g_logits, nullptr, g_r, false);
  std::vector<T> g_x(filled.seq.x.size(), T(0));
  net.encoder.encode_backward(net.params, filled.seq, enc_cache, g_r, nullptr, g_x);
  out.grad.assign(prompt.size(), T(0));
  fill_backward<T>(filled, g_x, out.grad);
  return out;
}

struct CalibrationStats {
  double mean_loss_before = 0;  // loss of each sample before its first inner step
  int samples = 0;
  int fill_warnings = 0;
};

/// Inner-loop calibration: K plain gradient steps of size `lr` on
///   (1/|W|) sum_{j in W} l(f_frozen(I_j, Encode(Fill(X_j, A_j; P_j))), M_j)
/// with respect to the rows P_j of `batch_w` only. `frozen` is const: its
/// parameters cannot change.
template <typename T>
CalibrationStats calibrate(PromptBank<T>& bank, std::span<const model::Example> batch_w,
                           const model::Network<T>& frozen, int steps, double lr) {
  CalibrationStats stats;
  if (batch_w.empty()) return stats;
  // Resolve every row first so a missing id fails before anything is modified.
  std::vector<std::size_t> rows;
  for (const auto& ex : batch_w) rows.push_back(bank.row_of(ex.id));
  if (steps <= 0) return stats;
  const T scale = T(1) / static_cast<T>(batch_w.size());
  double loss_sum = 0;
  for (std::size_t i = 0; i < batch_w.size(); ++i) {
    const auto& ex = batch_w[i];
    const auto features = frozen.seg.encode_image(frozen.params, ex.image);
    const auto seq = frozen.encoder.embed(frozen.params, ex.tokens);
    auto row = bank.row(rows[i]);
    for (int k = 0; k < steps; ++k) {
      auto pg = prompt_gradient<T>(frozen, seq, features, ex.mask, row, bank.prompts(), scale);
      if (!std::isfinite(static_cast<double>(pg.loss)))
        throw RuntimeError("non-finite calibration loss for sample '" + ex.id + "'");
      if (k == 0) {
        loss_sum += static_cast<double>(pg.loss);
        stats.fill_warnings += pg.warning.has_value();
      }
      for (std::size_t e = 0; e < row.size(); ++e) row[e] -= static_cast<T>(lr) * pg.grad[e];
    }
  }
  stats.samples = static_cast<int>(batch_w.size());
  stats.mean_loss_before = loss_sum / stats.samples;
  return stats;
}

}  // namespace wrel::lrb
