#pragma once

#include <span>
#include <string>
#include <vector>

#include "wrel/digest.hpp"
#include "wrel/model/loss.hpp"
#include "wrel/model/seg_model.hpp"
#include "wrel/nn/params.hpp"
#include "wrel/text/encoder.hpp"

namespace wrel::model {

struct NetworkDims {
  text::EncoderDims text;
  SegDims seg;
  int seq_len = 16;  // L
};

/// Text encoder + segmentation model sharing one named parameter set
/// ("enc.*" and "seg.*"). Copying a Network copies its parameters; the
/// layer objects only hold indices into the set.
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(NetworkDims dims) : dims_(dims) {
    dims_.seg.ref_dim = dims_.text.out_dim;
    encoder = text::TextEncoder<T>(params, dims_.text);
    seg = SegModel<T>(params, dims_.seg);
  }

  void init(Rng& rng) {
    encoder.init(params, rng);
    seg.init(params, rng);
  }

  const NetworkDims& dims() const { return dims_; }

  nn::ParamSet<T> params;
  text::TextEncoder<T> encoder;
  SegModel<T> seg;

 private:
  NetworkDims dims_;
};

/// SHA-256 over parameter names, shapes and raw values.
template <typename T>
std::string param_digest(const nn::ParamSet<T>& params) {
  Sha256 h;
  for (const auto& e : params.entries()) {
    h.update(e.name).update("|", 1);
    for (auto s : e.shape) h.update(std::to_string(s) + ",");
    h.update(std::span<const T>(e.values));
  }
  return h.finish();
}

/// Copies parameters between precisions (same layout required).
template <typename To, typename From>
void convert_params(const nn::ParamSet<From>& src, nn::ParamSet<To>& dst) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i];
    auto d = dst[i];
    if (s.size() != d.size()) throw ConfigError("parameter layout mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<To>(s[k]);
  }
}

}  // namespace wrel::model
