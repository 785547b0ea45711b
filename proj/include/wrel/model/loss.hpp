#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "wrel/common.hpp"

namespace wrel::model {

/// Mean per-pixel binary cross-entropy on logits, computed in the
/// overflow-safe form max(z,0) - z*m + log1p(exp(-|z|)).
template <typename T>
T seg_loss(std::span<const T> logits, std::span<const std::uint8_t> mask) {
  if (logits.size() != mask.size()) throw ConfigError("logits and mask sizes differ");
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits[i];
    const T m = mask[i] ? T(1) : T(0);
    sum += std::max(z, T(0)) - z * m + std::log1p(std::exp(-std::abs(z)));
  }
  return sum / static_cast<T>(logits.size());
}

/// Writes scale * d seg_loss / d logits into `grad` (overwrites).
template <typename T>
void seg_loss_grad(std::span<const T> logits, std::span<const std::uint8_t> mask, T scale, std::span<T> grad) {
  const T inv = scale / static_cast<T>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits[i];
    const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    grad[i] = (p - (mask[i] ? T(1) : T(0))) * inv;
  }
}

}  // namespace wrel::model
