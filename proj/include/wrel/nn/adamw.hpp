#pragma once

#include <cmath>
#include <cstdint>

#include "wrel/common.hpp"
#include "wrel/nn/params.hpp"

namespace wrel::nn {

/// lr * (1 - step/total)^power, clamped at zero past the end.
inline double poly_lr(double base, std::int64_t step, std::int64_t total, double power) {
  if (total <= 0) return base;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return frac <= 0.0 ? 0.0 : base * std::pow(frac, power);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamSet<T>& layout, AdamWConfig cfg) : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

  void step(ParamSet<T>& params, const ParamSet<T>& grads, double lr) {
    if (!params.same_layout(m_) || !grads.same_layout(m_)) throw ConfigError("optimizer layout mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i];
      auto g = grads[i];
      auto m = m_[i];
      auto v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        const double mh = static_cast<double>(m[k]) / c1;
        const double vh = static_cast<double>(v[k]) / c2;
        p[k] = p[k] * decay - static_cast<T>(lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  ParamSet<T>& first_moment() { return m_; }
  ParamSet<T>& second_moment() { return v_; }
  const ParamSet<T>& first_moment() const { return m_; }
  const ParamSet<T>& second_moment() const { return v_; }

 private:
  AdamWConfig cfg_;
  ParamSet<T> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace wrel::nn
