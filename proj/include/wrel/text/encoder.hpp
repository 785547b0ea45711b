#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/nn/params.hpp"
#include "wrel/text/vocabulary.hpp"

namespace wrel::text {

/// Embedded text: X is L x d row-major, A the attention mask.
template <typename T>
struct TokenSequence {
  int length = 0;
  int dim = 0;
  std::vector<T> x;
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> slot;  // rows injected as raw content; encode adds PE(l) there (empty = none)

  bool is_slot(int l) const { return !slot.empty() && slot[static_cast<std::size_t>(l)]; }

  std::span<T> row(int l) { return {x.data() + static_cast<std::size_t>(l) * dim, static_cast<std::size_t>(dim)}; }
  std::span<const T> row(int l) const {
    return {x.data() + static_cast<std::size_t>(l) * dim, static_cast<std::size_t>(dim)};
  }
  int attended() const {
    int n = 0;
    for (auto a : mask) n += a != 0;
    return n;
  }
};

inline double positional_encoding(int position, int channel, int dim) {
  const int pair = channel / 2;
  const double angle = position / std::pow(10000.0, 2.0 * pair / dim);
  return channel % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

struct EncoderDims {
  int vocab = 0;
  int dim = 32;      // token width d
  int out_dim = 32;  // referring embedding width d_r
};

/// Embedding table + one masked single-head self-attention layer + masked
/// mean-pool + linear projection. Parameters live in an external ParamSet
/// under the "enc." prefix so student/teacher copies share one layout.
template <typename T>
class TextEncoder {
 public:
  struct Cache {
    std::vector<int> valid;  // attended positions, ascending
    std::vector<T> xv, q, k, v, attn, col_weight, pooled;
  };

  TextEncoder() = default;
  TextEncoder(nn::ParamSet<T>& params, EncoderDims dims) : dims_(dims) {
    const auto d = static_cast<std::size_t>(dims.dim);
    const auto dr = static_cast<std::size_t>(dims.out_dim);
    table_ = params.add("enc.embed", {static_cast<std::size_t>(dims.vocab), d});
    wq_ = params.add("enc.wq", {d, d});
    wk_ = params.add("enc.wk", {d, d});
    wv_ = params.add("enc.wv", {d, d});
    wo_ = params.add("enc.wo", {d, dr});
    bo_ = params.add("enc.bo", {dr});
  }

  const EncoderDims& dims() const { return dims_; }
  std::size_t table_index() const { return table_; }

  void init(nn::ParamSet<T>& params, Rng& rng) const {
    const double s = 1.0 / std::sqrt(static_cast<double>(dims_.dim));
    nn::init_normal(params[table_], 1.0, rng);
    // PAD embedding is never read (padded rows are zero by convention) but keep it zero too.
    for (int c = 0; c < dims_.dim; ++c) params[table_][static_cast<std::size_t>(c)] = T(0);
    nn::init_normal(params[wq_], s, rng);
    nn::init_normal(params[wk_], s, rng);
    nn::init_normal(params[wv_], s, rng);
    nn::init_normal(params[wo_], s, rng);
  }

  /// X[l] = table[id[l]] + PE(l) where A[l] = 1, zero elsewhere.
  TokenSequence<T> embed(const nn::ParamSet<T>& params, const Tokens& tokens) const {
    const int L = static_cast<int>(tokens.ids.size());
    if (tokens.mask.size() != tokens.ids.size()) throw ConfigError("ids and mask length differ");
    TokenSequence<T> seq{L, dims_.dim, std::vector<T>(static_cast<std::size_t>(L) * dims_.dim, T(0)),
                         tokens.mask, {}};
    const auto table = params[table_];
    for (int l = 0; l < L; ++l) {
      if (!tokens.mask[static_cast<std::size_t>(l)]) continue;
      const int id = tokens.ids[static_cast<std::size_t>(l)];
      if (id < 0 || id >= dims_.vocab) throw ConfigError("token id " + std::to_string(id) + " out of range");
      auto row = seq.row(l);
      for (int c = 0; c < dims_.dim; ++c)
        row[static_cast<std::size_t>(c)] = table[static_cast<std::size_t>(id) * dims_.dim + c] +
                                           static_cast<T>(positional_encoding(l, c, dims_.dim));
    }
    return seq;
  }

  /// Accumulates dLoss/dtable from dLoss/dX.
  void embed_backward(const Tokens& tokens, std::span<const T> grad_x, nn::ParamSet<T>& grads) const {
    auto g = grads[table_];
    for (std::size_t l = 0; l < tokens.ids.size(); ++l) {
      if (!tokens.mask[l]) continue;
      const auto id = static_cast<std::size_t>(tokens.ids[l]);
      for (int c = 0; c < dims_.dim; ++c) g[id * dims_.dim + c] += grad_x[l * dims_.dim + c];
    }
  }

  /// Referring embedding r (length d_r). Rows with A[l] = 0 are never read.
  std::vector<T> encode(const nn::ParamSet<T>& params, const TokenSequence<T>& seq,
                        Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const int d = dims_.dim;
    if (seq.dim != d) throw ConfigError("token width does not match encoder");
    c.valid.clear();
    for (int l = 0; l < seq.length; ++l)
      if (seq.mask[static_cast<std::size_t>(l)]) c.valid.push_back(l);
    const int n = static_cast<int>(c.valid.size());
    if (n == 0) throw ConfigError("encode needs at least one attended position");

    const auto nd = static_cast<std::size_t>(n) * d;
    c.xv.assign(nd, T(0));
    for (int i = 0; i < n; ++i) {
      const int l = c.valid[static_cast<std::size_t>(i)];
      auto row = seq.row(l);
      std::copy(row.begin(), row.end(), c.xv.begin() + static_cast<std::ptrdiff_t>(i) * d);
      if (seq.is_slot(l))
        for (int e = 0; e < d; ++e) c.xv[i * d + e] += static_cast<T>(positional_encoding(l, e, d));
    }
    c.q.assign(nd, T(0));
    c.k.assign(nd, T(0));
    c.v.assign(nd, T(0));
    matmul(c.xv, params[wq_], n, d, d, c.q);
    matmul(c.xv, params[wk_], n, d, d, c.k);
    matmul(c.xv, params[wv_], n, d, d, c.v);

    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    c.attn.assign(static_cast<std::size_t>(n) * n, T(0));
    for (int i = 0; i < n; ++i) {
      T* a = c.attn.data() + static_cast<std::size_t>(i) * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < n; ++j) {
        T s = 0;
        for (int e = 0; e < d; ++e) s += c.q[i * d + e] * c.k[j * d + e];
        a[j] = s * scale;
        mx = std::max(mx, a[j]);
      }
      T z = 0;
      for (int j = 0; j < n; ++j) z += (a[j] = std::exp(a[j] - mx));
      for (int j = 0; j < n; ++j) a[j] /= z;
    }
    // mean over queries of (attn V) == (column means of attn) V
    c.col_weight.assign(static_cast<std::size_t>(n), T(0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c.col_weight[j] += c.attn[i * n + j];
    for (auto& w : c.col_weight) w /= static_cast<T>(n);
    c.pooled.assign(static_cast<std::size_t>(d), T(0));
    for (int j = 0; j < n; ++j)
      for (int e = 0; e < d; ++e) c.pooled[e] += c.col_weight[j] * c.v[j * d + e];

    const auto bo = params[bo_];
    std::vector<T> r(bo.begin(), bo.end());
    matmul(c.pooled, params[wo_], 1, d, dims_.out_dim, r);
    return r;
  }

  /// Backward of encode. `grads` (parameter gradients) and `grad_x` (L x d) may each be null.
  void encode_backward(const nn::ParamSet<T>& params, const TokenSequence<T>& seq, const Cache& c,
                       std::span<const T> grad_r, nn::ParamSet<T>* grads, std::span<T> grad_x) const {
    const int d = dims_.dim, dr = dims_.out_dim;
    const int n = static_cast<int>(c.valid.size());
    const auto wo = params[wo_];
    if (grads) {
      auto gbo = (*grads)[bo_];
      auto gwo = (*grads)[wo_];
      for (int o = 0; o < dr; ++o) gbo[o] += grad_r[o];
      for (int e = 0; e < d; ++e)
        for (int o = 0; o < dr; ++o) gwo[e * dr + o] += c.pooled[e] * grad_r[o];
    }
    std::vector<T> g_pooled(static_cast<std::size_t>(d), T(0));
    for (int e = 0; e < d; ++e) {
      T s = 0;
      for (int o = 0; o < dr; ++o) s += wo[e * dr + o] * grad_r[o];
      g_pooled[e] = s;
    }
    const auto nd = static_cast<std::size_t>(n) * d;
    std::vector<T> gq(nd, T(0)), gk(nd, T(0)), gv(nd, T(0));
    std::vector<T> g_col(static_cast<std::size_t>(n), T(0));
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int e = 0; e < d; ++e) {
        gv[j * d + e] = c.col_weight[j] * g_pooled[e];
        s += g_pooled[e] * c.v[j * d + e];
      }
      g_col[j] = s / static_cast<T>(n);  // dL/d attn[i][j], identical for every query i
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    for (int i = 0; i < n; ++i) {
      const T* a = c.attn.data() + static_cast<std::size_t>(i) * n;
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += a[j] * g_col[j];
      for (int j = 0; j < n; ++j) {
        const T gs = a[j] * (g_col[j] - dot) * scale;
        if (gs == T(0)) continue;
        for (int e = 0; e < d; ++e) {
          gq[i * d + e] += gs * c.k[j * d + e];
          gk[j * d + e] += gs * c.q[i * d + e];
        }
      }
    }
    if (grads) {
      matmul_at_b(c.xv, gq, n, d, d, (*grads)[wq_]);
      matmul_at_b(c.xv, gk, n, d, d, (*grads)[wk_]);
      matmul_at_b(c.xv, gv, n, d, d, (*grads)[wv_]);
    }
    if (!grad_x.empty()) {
      std::vector<T> gxv(nd, T(0));
      matmul_b_t(gq, params[wq_], n, d, d, gxv);
      matmul_b_t(gk, params[wk_], n, d, d, gxv);
      matmul_b_t(gv, params[wv_], n, d, d, gxv);
      for (int i = 0; i < n; ++i) {
        const auto l = static_cast<std::size_t>(c.valid[static_cast<std::size_t>(i)]);
        for (int e = 0; e < d; ++e) grad_x[l * d + e] += gxv[i * d + e];
      }
    }
    (void)seq;
  }

 private:
  // out (n x m) += a (n x k) * b (k x m)
  static void matmul(std::span<const T> a, std::span<const T> b, int n, int k, int m, std::span<T> out) {
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        for (int j = 0; j < m; ++j) out[i * m + j] += av * b[p * m + j];
      }
  }
  // out (k x m) += a^T (a: n x k) * g (n x m)
  static void matmul_at_b(std::span<const T> a, std::span<const T> g, int n, int k, int m, std::span<T> out) {
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        for (int j = 0; j < m; ++j) out[p * m + j] += av * g[i * m + j];
      }
  }
  // out (n x k) += g (n x m) * b^T (b: k x m)
  static void matmul_b_t(std::span<const T> g, std::span<const T> b, int n, int k, int m, std::span<T> out) {
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        T s = 0;
        for (int j = 0; j < m; ++j) s += g[i * m + j] * b[p * m + j];
        out[i * k + p] += s;
      }
  }

  EncoderDims dims_;
  std::size_t table_ = 0, wq_ = 0, wk_ = 0, wv_ = 0, wo_ = 0, bo_ = 0;
};

}  // namespace wrel::text
