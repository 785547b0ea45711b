#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "wrel/common.hpp"
#include "wrel/model/network.hpp"

namespace wrel::train {

enum class Mode { kOnlyAccurate, kWrel, kLrbWrel };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::kOnlyAccurate: return "only-accurate";
    case Mode::kWrel: return "wrel";
    case Mode::kLrbWrel: return "lrb-wrel";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "only-accurate") return Mode::kOnlyAccurate;
  if (s == "wrel") return Mode::kWrel;
  if (s == "lrb-wrel") return Mode::kLrbWrel;
  throw ConfigError("unknown mode '" + s + "' (expected only-accurate, wrel or lrb-wrel)");
}

struct Stage1Config {
  int epochs = 15;
  double lr = 3e-5;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int batch = 8;
};

struct Stage2Config {
  int epochs = 40;
  double aux_lr = 1e-5;  // reserved: no auxiliary module is unfrozen in stage 2
  double prompt_lr = 1e-6;
  int inner_steps = 1;
  int batch = 8;
};

struct Stage3Config {
  int epochs = 40;
  double lr = 3e-5;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int batch = 8;
  double prompt_lr = 1e-6;
  int inner_steps = 1;  // K
  int update_freq = 1;  // F
  double alpha_max = 0.9995;
  std::string ema_ramp = "mean-teacher";  // or "constant"
};

struct TrainConfig {
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  int prompts = 4;  // p
  double prompt_sigma = 0.02;
  model::NetworkDims net;

  void validate() const {
    const auto positive = [](double v, const char* what) {
      if (!(v > 0)) throw ConfigError(std::string(what) + " must be > 0");
    };
    positive(stage1.lr, "stage1.lr");
    positive(stage2.aux_lr, "stage2.aux_lr");
    positive(stage2.prompt_lr, "stage2.prompt_lr");
    positive(stage3.lr, "stage3.lr");
    positive(stage3.prompt_lr, "stage3.prompt_lr");
    if (stage1.epochs < 0 || stage2.epochs < 0 || stage3.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (stage1.batch < 1 || stage2.batch < 1 || stage3.batch < 1) throw ConfigError("batch size must be >= 1");
    if (stage2.inner_steps < 0 || stage3.inner_steps < 0) throw ConfigError("inner_steps K must be >= 0");
    if (stage3.update_freq < 1) throw ConfigError("update_freq F must be >= 1");
    if (!(stage3.alpha_max > 0 && stage3.alpha_max <= 1)) throw ConfigError("alpha_max must lie in (0, 1]");
    if (stage3.ema_ramp != "mean-teacher" && stage3.ema_ramp != "constant")
      throw ConfigError("unknown ema_ramp '" + stage3.ema_ramp + "'");
    if (!std::isfinite(lambda) || lambda < 0) throw ConfigError("lambda must be finite and >= 0");
    if (prompts < 1) throw ConfigError("prompts p must be >= 1");
    if (net.seq_len < 3) throw ConfigError("seq_len must be >= 3");
  }
};

}  // namespace wrel::train
