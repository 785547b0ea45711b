#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/text/encoder.hpp"

namespace wrel::lrb {

/// Trainable prompt matrix P of shape N_w x p x d with one row per weak sample.
template <typename T>
class PromptBank {
 public:
  PromptBank() = default;

  /// Rows are ordered by sorted sample id; initialized N(0, sigma^2) from `seed`.
  PromptBank(std::vector<std::string> ids, int prompts, int dim, std::uint64_t seed, double sigma = 0.02)
      : prompts_(prompts), dim_(dim) {
    if (prompts < 1) throw ConfigError("prompt count p must be >= 1");
    std::sort(ids.begin(), ids.end());
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (!index_.emplace(ids[j], j).second) throw ConfigError("duplicate weak sample id '" + ids[j] + "'");
    ids_ = std::move(ids);
    values_.assign(ids_.size() * row_size(), T(0));
    Rng rng(seed);
    for (auto& v : values_) v = static_cast<T>(sigma * rng.normal());
  }

  int prompts() const { return prompts_; }
  int dim() const { return dim_; }
  std::size_t rows() const { return ids_.size(); }
  std::size_t row_size() const { return static_cast<std::size_t>(prompts_) * dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return index_.contains(id); }

  std::size_t row_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("sample '" + id + "' has no prompt bank row");
    return it->second;
  }
  std::span<T> row(std::size_t j) { return {values_.data() + j * row_size(), row_size()}; }
  std::span<const T> row(std::size_t j) const { return {values_.data() + j * row_size(), row_size()}; }
  std::span<T> row(const std::string& id) { return row(row_of(id)); }
  std::span<const T> row(const std::string& id) const { return row(row_of(id)); }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  /// Every weak expression must leave at least p padding slots: p <= L - (tokens + 2).
  void validate_capacity(int max_expression_tokens, int seq_len) const {
    if (prompts_ > seq_len - (max_expression_tokens + 2))
      throw ConfigError("prompt count p=" + std::to_string(prompts_) + " exceeds the free padding slots (L=" +
                        std::to_string(seq_len) + ", longest weak expression " +
                        std::to_string(max_expression_tokens) + " tokens)");
  }

  friend bool operator==(const PromptBank& a, const PromptBank& b) {
    return a.prompts_ == b.prompts_ && a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_;
  }

 private:
  int prompts_ = 0;
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> index_;
  std::vector<T> values_;
};

/// Omega = { l : A[l] = 0 }, ascending.
inline std::vector<int> padding_set(std::span<const std::uint8_t> mask) {
  std::vector<int> omega;
  for (std::size_t l = 0; l < mask.size(); ++l)
    if (!mask[l]) omega.push_back(static_cast<int>(l));
  return omega;
}

struct FillWarning {
  int unused_prompt_rows = 0;  // prompt rows k > |Omega| that found no slot
};

template <typename T>
struct FillResult {
  text::TokenSequence<T> seq;  // (X-bar, A-bar)
  std::vector<int> filled_positions;
  std::optional<FillWarning> warning;
};

/// Writes prompt row k into the k-th padding slot and opens its mask bit.
/// The slot's positional encoding is added later by encode.
/// Surplus padding beyond p stays untouched; surplus prompts are reported.
template <typename T>
FillResult<T> fill(const text::TokenSequence<T>& seq, std::span<const T> prompt, int prompts) {
  FillResult<T> out{seq, {}, std::nullopt};
  const auto omega = padding_set(seq.mask);
  const int used = std::min(prompts, static_cast<int>(omega.size()));
  const auto d = static_cast<std::size_t>(seq.dim);
  for (int k = 0; k < used; ++k) {
    const int l = omega[static_cast<std::size_t>(k)];
    auto dst = out.seq.row(l);
    std::copy(prompt.begin() + static_cast<std::ptrdiff_t>(k * d),
              prompt.begin() + static_cast<std::ptrdiff_t>((k + 1) * d), dst.begin());
    out.seq.mask[static_cast<std::size_t>(l)] = 1;
    if (out.seq.slot.empty()) out.seq.slot.assign(out.seq.mask.size(), 0);
    out.seq.slot[static_cast<std::size_t>(l)] = 1;
    out.filled_positions.push_back(l);
  }
  if (used < prompts) out.warning = FillWarning{prompts - used};
  return out;
}

/// Gathers dL/dP_j from dL/dX-bar: the Jacobian of fill w.r.t. each used prompt row is the identity.
template <typename T>
void fill_backward(const FillResult<T>& filled, std::span<const T> grad_x, std::span<T> grad_prompt) {
  const auto d = static_cast<std::size_t>(filled.seq.dim);
  for (std::size_t k = 0; k < filled.filled_positions.size(); ++k) {
    const auto l = static_cast<std::size_t>(filled.filled_positions[k]);
    for (std::size_t e = 0; e < d; ++e) grad_prompt[k * d + e] += grad_x[l * d + e];
  }
}

}  // namespace wrel::lrb
