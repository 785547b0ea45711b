#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/digest.hpp"
#include "wrel/lrb/bank.hpp"
#include "wrel/lrb/calibrate.hpp"
#include "wrel/metrics/metrics.hpp"
#include "wrel/model/example.hpp"
#include "wrel/model/network.hpp"
#include "wrel/model/objective.hpp"
#include "wrel/nn/adamw.hpp"
#include "wrel/train/config.hpp"
#include "wrel/train/ema.hpp"

namespace wrel::train {

enum class Phase : int { kInit = 0, kStage1 = 1, kStage2 = 2, kStage3 = 3 };

template <typename T>
struct TrainerState {
  Phase phase = Phase::kInit;
  int epoch = 0;  // completed epochs of `phase`
  model::Network<T> student;
  model::Network<T> teacher;
  std::optional<lrb::PromptBank<T>> bank;
  nn::AdamW<T> optimizer;
  std::int64_t t = 0;  // stage-3 batches taken
  std::uint64_t seed = 0;
};

struct EpochRecord {
  Phase phase = Phase::kInit;
  int epoch = 0;        // 1-based
  double train_loss = 0;  // mean per-sample loss seen by the update of this epoch
  int batches = 0;
};

/// One stage-3 batch, recorded only when a step hook is installed.
struct StepTrace {
  std::int64_t t = 0;
  int epoch = 0;
  bool calibrated = false;
  std::string teacher_before_calibration;
  std::string teacher_after_calibration;
  std::string bank_before_update;
  std::string bank_after_update;
  double bank_grad_max_abs = 0;  // |dL_student/dP| pulled back through sg
  double gate_grad_norm = 0;     // largest |dL_student/d sg[P_j]| arriving at the gate
  int weak_in_batch = 0;
  double alpha = 0;
  double loss = 0;
};

/// One stage-2 calibrate call.
struct CalibrationTrace {
  int epoch = 0;
  int call = 0;
  std::string frozen_before;
  std::string frozen_after;
  double mean_loss_before = 0;
};

template <typename T>
struct Hooks {
  std::function<void(const EpochRecord&, const TrainerState<T>&)> on_epoch;
  std::function<void(const StepTrace&, const TrainerState<T>&)> on_step;
  std::function<void(const CalibrationTrace&)> on_calibrate;
};

struct TrainData {
  std::vector<model::Example> accurate;
  std::vector<model::Example> weak;
};

template <typename T>
std::string bank_digest(const lrb::PromptBank<T>& bank) {
  Sha256 h;
  for (const auto& id : bank.ids()) h.update(id).update("\n", 1);
  h.update(std::span<const T>(bank.values()));
  return h.finish();
}

inline std::vector<std::size_t> epoch_order(std::uint64_t seed, Phase phase, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = Rng::stream(seed, static_cast<std::uint64_t>(phase) * 1000003ULL + static_cast<std::uint64_t>(epoch));
  rng.shuffle(order.begin(), order.end());
  return order;
}

inline std::int64_t batches_per_epoch(std::size_t n, int batch) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

inline void check_finite(double loss, const char* stage, int epoch) {
  if (!std::isfinite(loss))
    throw RuntimeError(std::string(stage) + " diverged: non-finite loss in epoch " + std::to_string(epoch + 1));
}

/// A bank exists only in lrb-wrel mode with K > 0; K = 0 is plain WREL.
inline bool uses_bank(const TrainConfig& cfg, Mode mode) {
  return mode == Mode::kLrbWrel && cfg.stage3.inner_steps > 0;
}

/// Fresh state: seeded initialization, teacher = student, bank over `weak_ids` when used.
template <typename T>
TrainerState<T> init_state(const TrainConfig& cfg, Mode mode, const std::vector<std::string>& weak_ids) {
  cfg.validate();
  TrainerState<T> st;
  st.seed = cfg.seed;
  st.student = model::Network<T>(cfg.net);
  auto init_rng = Rng::stream(cfg.seed, 0x1417);
  st.student.init(init_rng);
  st.teacher = st.student;
  if (uses_bank(cfg, mode) && !weak_ids.empty())
    st.bank.emplace(weak_ids, cfg.prompts, cfg.net.text.dim, Rng::stream(cfg.seed, 0xba4c).next_u64(),
                    cfg.prompt_sigma);
  return st;
}

/// Stage 1: AdamW on accurate samples, mean loss per batch, polynomial decay.
template <typename T>
void stage1_warmup(const TrainConfig& cfg, TrainerState<T>& st, std::span<const model::Example> accurate,
                   const Hooks<T>& hooks = {}) {
  if (st.phase > Phase::kStage1) return;
  if (accurate.empty()) throw ConfigError("stage 1 needs a nonempty accurate split");
  const auto& sc = cfg.stage1;
  if (st.phase < Phase::kStage1) {
    st.phase = Phase::kStage1;
    st.epoch = 0;
    st.optimizer = nn::AdamW<T>(st.student.params, {.weight_decay = sc.weight_decay});
  }
  const auto total = sc.epochs * batches_per_epoch(accurate.size(), sc.batch);
  auto grads = st.student.params.zeros_like();
  while (st.epoch < sc.epochs) {
    const auto order = epoch_order(st.seed, Phase::kStage1, st.epoch, accurate.size());
    EpochRecord rec{Phase::kStage1, st.epoch + 1, 0, 0};
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(sc.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(sc.batch));
      const T scale = T(1) / static_cast<T>(e - b);
      grads.fill(T(0));
      for (std::size_t i = b; i < e; ++i)
        sum += static_cast<double>(model::example_loss<T>(st.student, accurate[order[i]], model::TextPath::kEncode,
                                                          {}, 0, scale, &grads));
      check_finite(sum, "stage 1", st.epoch);
      st.optimizer.step(st.student.params, grads, nn::poly_lr(sc.lr, st.optimizer.steps(), total, sc.poly_power));
      ++rec.batches;
    }
    rec.train_loss = sum / static_cast<double>(accurate.size());
    ++st.epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec, st);
  }
}

/// Stage 2: calibrate bank rows over the weak split against the frozen warm-up model.
template <typename T>
void stage2_lrb_warmup(const TrainConfig& cfg, TrainerState<T>& st, std::span<const model::Example> weak,
                       const Hooks<T>& hooks = {}) {
  if (st.phase > Phase::kStage2) return;
  if (st.phase < Phase::kStage2) {
    st.phase = Phase::kStage2;
    st.epoch = 0;
  }
  if (!st.bank) {
    st.epoch = cfg.stage2.epochs;
    return;
  }
  const auto& sc = cfg.stage2;
  const model::Network<T>& frozen = st.student;
  int call = 0;
  while (st.epoch < sc.epochs) {
    const auto order = epoch_order(st.seed, Phase::kStage2, st.epoch, weak.size());
    EpochRecord rec{Phase::kStage2, st.epoch + 1, 0, 0};
    double sum = 0;
    std::vector<model::Example> batch;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(sc.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(sc.batch));
      batch.clear();
      for (std::size_t i = b; i < e; ++i) batch.push_back(weak[order[i]]);
      CalibrationTrace tr;
      if (hooks.on_calibrate) tr.frozen_before = model::param_digest(frozen.params);
      const auto stats = lrb::calibrate<T>(*st.bank, batch, frozen, sc.inner_steps, sc.prompt_lr);
      sum += stats.mean_loss_before * stats.samples;
      ++rec.batches;
      if (hooks.on_calibrate) {
        tr.epoch = st.epoch + 1;
        tr.call = call;
        tr.frozen_after = model::param_digest(frozen.params);
        tr.mean_loss_before = stats.mean_loss_before;
        hooks.on_calibrate(tr);
      }
      ++call;
    }
    rec.train_loss = weak.empty() ? 0.0 : sum / static_cast<double>(weak.size());
    ++st.epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec, st);
  }
}

/// dL/dP_j of a weak term whose prompt enters through sg[P_j], obtained by
/// backpropagating the student loss through the actual graph
/// loss -> r_mix -> Encode -> Fill -> sg -> P_j. Writes |dL/d sg[P_j]|, the
/// gradient arriving at the gate, to `gate_norm`.
template <typename T>
std::vector<T> sg_prompt_gradient(const model::Network<T>& student, const model::Example& ex,
                                  std::span<const T> prompt, int prompts, T scale, double& gate_norm) {
  const auto seq = student.encoder.embed(student.params, ex.tokens);
  const auto filled = lrb::fill(seq, prompt, prompts);
  typename text::TextEncoder<T>::Cache enc_cache;
  const auto r = student.encoder.encode(student.params, filled.seq, &enc_cache);
  const auto features = student.seg.encode_image(student.params, ex.image);
  typename model::SegModel<T>::DecodeCache dec_cache;
  const auto logits = student.seg.decode(student.params, features, r, &dec_cache);
  std::vector<T> g_logits(logits.size());
  model::seg_loss_grad<T>(logits, ex.mask, scale, g_logits);
  std::vector<T> g_r(r.size(), T(0));
  student.seg.decode_backward(student.params, features, dec_cache, r, g_logits, nullptr, g_r, false);
  std::vector<T> g_x(filled.seq.x.size(), T(0));
  student.encoder.encode_backward(student.params, filled.seq, enc_cache, g_r, nullptr, g_x);
  std::vector<T> g_sg(prompt.size(), T(0));
  lrb::fill_backward<T>(filled, g_x, g_sg);
  double n2 = 0;
  for (auto v : g_sg) n2 += static_cast<double>(v) * static_cast<double>(v);
  gate_norm = std::sqrt(n2);
  // sg has a zero Jacobian.
  std::vector<T> g_p(prompt.size());
  for (std::size_t k = 0; k < g_p.size(); ++k) g_p[k] = T(0) * g_sg[k];
  return g_p;
}

/// Stage 3: per batch (a) calibrate W rows on the frozen teacher every F
/// steps, (b) r_mix = Encode(Fill(X, A; sg[P_j])) for weak samples, (c) one AdamW student step on
/// (1/|B|) (sum_S l + lambda sum_W l), (d) EMA teacher update.
template <typename T>
void stage3_joint(const TrainConfig& cfg, TrainerState<T>& st, std::span<const model::Example> mixed,
                  const Hooks<T>& hooks = {}) {
  if (mixed.empty()) throw ConfigError("stage 3 needs a nonempty mixed split");
  const auto& sc = cfg.stage3;
  if (st.phase < Phase::kStage3) {
    st.phase = Phase::kStage3;
    st.epoch = 0;
    st.t = 0;
    st.teacher = st.student;
    st.optimizer = nn::AdamW<T>(st.student.params, {.weight_decay = sc.weight_decay});
  }
  if (st.bank)
    for (const auto& ex : mixed)
      if (ex.weak) (void)st.bank->row_of(ex.id);
  const EmaSchedule ema{sc.alpha_max, sc.ema_ramp};
  const auto total = sc.epochs * batches_per_epoch(mixed.size(), sc.batch);
  const bool tracing = static_cast<bool>(hooks.on_step);
  auto grads = st.student.params.zeros_like();
  std::vector<model::Example> weak_batch;
  while (st.epoch < sc.epochs) {
    const auto order = epoch_order(st.seed, Phase::kStage3, st.epoch, mixed.size());
    EpochRecord rec{Phase::kStage3, st.epoch + 1, 0, 0};
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(sc.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(sc.batch));
      StepTrace tr;
      tr.t = st.t;
      tr.epoch = st.epoch + 1;
      weak_batch.clear();
      for (std::size_t i = b; i < e; ++i)
        if (mixed[order[i]].weak) weak_batch.push_back(mixed[order[i]]);
      tr.weak_in_batch = static_cast<int>(weak_batch.size());

      // (a)
      if (tracing) tr.teacher_before_calibration = model::param_digest(st.teacher.params);
      if (st.bank && sc.inner_steps > 0 && st.t % sc.update_freq == 0 && !weak_batch.empty()) {
        const model::Network<T>& frozen = st.teacher;
        lrb::calibrate<T>(*st.bank, weak_batch, frozen, sc.inner_steps, sc.prompt_lr);
        tr.calibrated = true;
      }
      if (tracing) {
        tr.teacher_after_calibration = model::param_digest(st.teacher.params);
        if (st.bank) tr.bank_before_update = bank_digest(*st.bank);
      }

      // (b) + (c)
      const T inv_b = T(1) / static_cast<T>(e - b);
      const T weak_scale = static_cast<T>(cfg.lambda) * inv_b;
      grads.fill(T(0));
      double batch_loss = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto& ex = mixed[order[i]];
        const T scale = ex.weak ? weak_scale : inv_b;
        T l;
        if (ex.weak && st.bank) {
          const auto row = std::span<const T>(st.bank->row(ex.id));
          l = model::example_loss<T>(st.student, ex, model::TextPath::kEnhance, row, st.bank->prompts(), scale,
                                     &grads);
          if (tracing) {
            double gr = 0;
            const auto gp = sg_prompt_gradient<T>(st.student, ex, row, st.bank->prompts(), scale, gr);
            tr.gate_grad_norm = std::max(tr.gate_grad_norm, gr);
            for (auto v : gp) tr.bank_grad_max_abs = std::max(tr.bank_grad_max_abs, std::abs(static_cast<double>(v)));
          }
        } else {
          l = model::example_loss<T>(st.student, ex, model::TextPath::kEncode, {}, 0, scale, &grads);
        }
        batch_loss += static_cast<double>(l);
      }
      check_finite(batch_loss, "stage 3", st.epoch);
      sum += batch_loss;
      st.optimizer.step(st.student.params, grads, nn::poly_lr(sc.lr, st.optimizer.steps(), total, sc.poly_power));
      if (tracing && st.bank) tr.bank_after_update = bank_digest(*st.bank);

      // (d)
      tr.alpha = ema_alpha(st.t, ema);
      ema_update(st.teacher.params, st.student.params, tr.alpha);
      ++st.t;
      ++rec.batches;
      tr.loss = batch_loss / static_cast<double>(e - b);
      if (tracing) hooks.on_step(tr, st);
    }
    rec.train_loss = sum / static_cast<double>(mixed.size());
    ++st.epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec, st);
  }
}

/// Examples seen by stage 3 in each mode.
inline std::vector<model::Example> stage3_examples(const TrainData& data, Mode mode) {
  std::vector<model::Example> out = data.accurate;
  if (mode != Mode::kOnlyAccurate) out.insert(out.end(), data.weak.begin(), data.weak.end());
  return out;
}

/// Runs the stages of `mode` from wherever `st` stands up to and including `last`.
template <typename T>
void run_pipeline(const TrainConfig& cfg, Mode mode, TrainerState<T>& st, const TrainData& data,
                  const Hooks<T>& hooks = {}, Phase last = Phase::kStage3) {
  cfg.validate();
  if (last >= Phase::kStage1) stage1_warmup<T>(cfg, st, data.accurate, hooks);
  if (last >= Phase::kStage2) stage2_lrb_warmup<T>(cfg, st, data.weak, hooks);
  if (last >= Phase::kStage3) {
    const auto mixed = stage3_examples(data, mode);
    stage3_joint<T>(cfg, st, mixed, hooks);
  }
}

/// Logits with the accurate-expression path Encode(X, A).
template <typename T>
std::vector<T> predict(const model::Network<T>& net, const model::Example& ex) {
  const auto r = net.encoder.encode(net.params, net.encoder.embed(net.params, ex.tokens));
  return net.seg.forward(net.params, ex.image, r);
}

template <typename T>
metrics::MetricsReport evaluate_network(const model::Network<T>& net, std::span<const model::Example> split,
                                        const std::string& name) {
  return metrics::evaluate<model::Example>(split, [&](const model::Example& ex) { return predict<T>(net, ex); },
                                           name);
}

/// Mean seg_loss under the accurate-expression path.
template <typename T>
double mean_loss(const model::Network<T>& net, std::span<const model::Example> split) {
  if (split.empty()) throw ConfigError("mean loss of an empty split");
  double s = 0;
  for (const auto& ex : split) s += static_cast<double>(model::seg_loss<T>(predict<T>(net, ex), ex.mask));
  return s / static_cast<double>(split.size());
}

}  // namespace wrel::train
