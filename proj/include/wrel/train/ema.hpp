#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "wrel/common.hpp"
#include "wrel/nn/params.hpp"

namespace wrel::train {

struct EmaSchedule {
  double alpha_max = 0.9995;
  std::string ramp = "mean-teacher";
};

/// Default ramp min(alpha_max, 1 - 1/(t+1)); "constant" holds alpha_max from the start.
inline double ema_alpha(std::int64_t t, const EmaSchedule& s) {
  if (t < 0) throw ConfigError("EMA step must be >= 0");
  if (s.ramp == "constant") return s.alpha_max;
  if (s.ramp != "mean-teacher") throw ConfigError("unknown EMA ramp '" + s.ramp + "'");
  return std::min(s.alpha_max, 1.0 - 1.0 / static_cast<double>(t + 1));
}

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
template <typename T>
void ema_update(nn::ParamSet<T>& teacher, const nn::ParamSet<T>& student, double alpha) {
  if (!teacher.same_layout(student)) throw ConfigError("teacher and student parameter sets differ");
  const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto t = teacher[i];
    auto s = student[i];
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = a * t[k] + b * s[k];
  }
}

}  // namespace wrel::train
