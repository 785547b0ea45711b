#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "wrel/data/split.hpp"
#include "wrel/data/synthetic.hpp"
#include "wrel/train/checkpoint.hpp"
#include "wrel/train/pipeline.hpp"

using namespace wrel;
using wrel::testing::TempDir;

namespace {

/// A small synthetic benchmark at 16x16 with its tokenized train split.
struct Toy {
  data::DatasetManifest view;
  text::Vocabulary vocab;
  train::TrainData data;
  std::vector<std::string> weak_ids;

  explicit Toy(int n = 40, double ratio = 0.25, std::uint64_t seed = 1) {
    data::SyntheticSceneConfig sc;
    sc.grid_size = 16;
    sc.max_instances = 2;
    sc.seed = seed;
    const auto m = data::generate_synthetic(sc, n);
    view = data::apply_split(m, data::stratified_split(m, {ratio, seed, true}));
    std::vector<std::string> exprs;
    for (const auto& s : view.samples) exprs.push_back(s.expression);
    vocab = text::Vocabulary::build(exprs, sc.classes);
    for (const auto& s : view.samples) {
      auto ex = model::make_example(s, vocab, 10);
      if (ex.weak) {
        weak_ids.push_back(ex.id);
        data.weak.push_back(std::move(ex));
      } else {
        data.accurate.push_back(std::move(ex));
      }
    }
  }

  train::TrainConfig config(std::uint64_t seed = 0) const {
    train::TrainConfig c;
    c.seed = seed;
    c.net.text = {vocab.size(), 8, 8};
    c.net.seg = {16, 8, 4, 6, 6, 4, 3};
    c.net.seq_len = 10;
    c.prompts = 2;
    c.stage1 = {2, 3e-3, 0.01, 0.9, 4};
    c.stage2.epochs = 2;
    c.stage2.prompt_lr = 50;
    c.stage2.batch = 4;
    c.stage3.epochs = 1;
    c.stage3.lr = 3e-3;
    c.stage3.prompt_lr = 50;
    c.stage3.batch = 2;
    return c;
  }
};

template <typename T>
std::string digest(const train::TrainerState<T>& st) {
  return model::param_digest(st.student.params) + model::param_digest(st.teacher.params) +
         (st.bank ? train::bank_digest(*st.bank) : "");
}

}  // namespace

TEST(Ema, AlphaRamp) {
  const train::EmaSchedule s{0.9995, "mean-teacher"};
  EXPECT_EQ(train::ema_alpha(0, s), 0.0);
  EXPECT_EQ(train::ema_alpha(1, s), 0.5);
  EXPECT_EQ(train::ema_alpha(9999, s), 0.9995);
  double prev = 0;
  for (std::int64_t t = 0; t < 5000; t += 7) {
    const double a = train::ema_alpha(t, s);
    EXPECT_GE(a, prev);
    EXPECT_LE(a, 0.9995);
    prev = a;
  }
  EXPECT_EQ(train::ema_alpha(0, {0.9, "constant"}), 0.9);
  EXPECT_THROW(train::ema_alpha(-1, s), Error);
  EXPECT_THROW(train::ema_alpha(1, {0.9, "cosine"}), Error);
}

TEST(Ema, UpdateExamples) {
  nn::ParamSet<double> t, s;
  t.add("w", {1});
  s.add("w", {1});
  t[0][0] = 2;
  s[0][0] = 4;
  auto a = t;
  train::ema_update(a, s, 0.5);
  EXPECT_EQ(a[0][0], 3.0);
  a = t;
  train::ema_update(a, s, 1.0);
  EXPECT_EQ(a[0][0], 2.0);
  a = t;
  train::ema_update(a, s, 0.0);
  EXPECT_EQ(a[0][0], 4.0);
  nn::ParamSet<double> other;
  other.add("v", {1});
  EXPECT_THROW(train::ema_update(a, other, 0.5), Error);
}

TEST(AdamW, MatchesHandComputedSteps) {
  nn::ParamSet<double> p;
  p.add("w", {2});
  p[0][0] = 1.0;
  p[0][1] = -2.0;
  auto g = p.zeros_like();
  nn::AdamW<double> opt(p, {0.9, 0.999, 1e-8, 0.01});
  // Step 1: m = 0.1 g, v = 0.001 g^2, bias-corrected to g and g^2: update = lr * sign(g).
  g[0][0] = 0.5;
  g[0][1] = -3.0;
  opt.step(p, g, 0.1);
  EXPECT_NEAR(p[0][0], 1.0 * (1 - 0.001) - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0][1], -2.0 * (1 - 0.001) + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  // Step 2 with g = 1 for the first entry.
  const double w = p[0][0];
  g[0][0] = 1.0;
  opt.step(p, g, 0.1);
  const double m = 0.9 * 0.05 + 0.1 * 1.0, v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0][0], w * (1 - 0.001) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(PolyLr, Schedule) {
  EXPECT_EQ(nn::poly_lr(1.0, 0, 10, 0.9), 1.0);
  EXPECT_NEAR(nn::poly_lr(1.0, 5, 10, 0.9), std::pow(0.5, 0.9), 1e-15);
  EXPECT_EQ(nn::poly_lr(1.0, 10, 10, 0.9), 0.0);
  EXPECT_EQ(nn::poly_lr(2.0, 3, 0, 0.9), 2.0);
}

TEST(Config, Validation) {
  train::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.stage3.update_freq = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.stage1.lr = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.stage3.alpha_max = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lambda = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(train::parse_mode("lrb-wrel"), train::Mode::kLrbWrel);
  EXPECT_THROW(train::parse_mode("fast"), Error);
}

TEST(Stage1, OverfitsASingleSample) {
  Toy toy;
  auto cfg = toy.config();
  cfg.net.seg = {16, 8, 16, 32, 32, 16, 3};
  cfg.stage1 = {200, 1e-2, 0.0, 0.9, 1};
  auto st = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, {});
  const std::vector<model::Example> one{toy.data.accurate[0]};
  train::stage1_warmup<float>(cfg, st, one);
  EXPECT_EQ(st.optimizer.steps(), 200);
  EXPECT_LT(train::mean_loss<float>(st.student, one), 0.05);
}

TEST(Stage1, ZeroEpochsKeepInitialization) {
  Toy toy;
  auto cfg = toy.config();
  cfg.stage1.epochs = 0;
  auto st = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, {});
  const auto init = model::param_digest(st.student.params);
  train::stage1_warmup<float>(cfg, st, toy.data.accurate);
  EXPECT_EQ(model::param_digest(st.student.params), init);
}

TEST(Stage1, SameSeedSameWeights) {
  Toy toy;
  const auto cfg = toy.config(5);
  auto a = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, {});
  auto b = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, {});
  train::stage1_warmup<float>(cfg, a, toy.data.accurate);
  train::stage1_warmup<float>(cfg, b, toy.data.accurate);
  EXPECT_EQ(digest(a), digest(b));
  auto c = train::init_state<float>(toy.config(6), train::Mode::kOnlyAccurate, {});
  train::stage1_warmup<float>(toy.config(6), c, toy.data.accurate);
  EXPECT_NE(digest(a), digest(c));
}

TEST(Stage1, EmptyAccurateSplitIsAnError) {
  Toy toy;
  const auto cfg = toy.config();
  auto st = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, {});
  EXPECT_THROW(train::stage1_warmup<float>(cfg, st, {}), Error);
}

TEST(Stage2, ZeroEpochsKeepTheBank) {
  Toy toy;
  auto cfg = toy.config();
  cfg.stage2.epochs = 0;
  auto st = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::stage1_warmup<float>(cfg, st, toy.data.accurate);
  const auto bank = *st.bank;
  train::stage2_lrb_warmup<float>(cfg, st, toy.data.weak);
  EXPECT_EQ(*st.bank, bank);
}

TEST(Stage2, FrozenModelAndDescendingWeakLoss) {
  Toy toy(80, 0.375);
  auto cfg = toy.config();
  cfg.stage1.epochs = 5;
  cfg.stage2.epochs = 5;
  ASSERT_EQ(toy.data.weak.size(), 50u);
  auto st = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::stage1_warmup<float>(cfg, st, toy.data.accurate);
  const auto model_digest = model::param_digest(st.student.params);
  // Mean weak loss of the bank as it stands, evaluated independently.
  const auto weak_loss = [&] {
    double s = 0;
    for (const auto& ex : toy.data.weak) {
      const auto r = lrb::enhance<float>(st.student, ex.tokens, st.bank->row(ex.id), st.bank->prompts());
      s += model::seg_loss<float>(st.student.seg.forward(st.student.params, ex.image, r), ex.mask);
    }
    return s / static_cast<double>(toy.data.weak.size());
  };
  std::vector<double> losses{weak_loss()};
  int calls = 0;
  train::Hooks<float> hooks;
  hooks.on_calibrate = [&](const train::CalibrationTrace& tr) {
    EXPECT_EQ(tr.frozen_before, tr.frozen_after);
    EXPECT_EQ(tr.frozen_before, model_digest);
    ++calls;
  };
  hooks.on_epoch = [&](const train::EpochRecord&, const train::TrainerState<float>&) { losses.push_back(weak_loss()); };
  train::stage2_lrb_warmup<float>(cfg, st, toy.data.weak, hooks);
  EXPECT_EQ(calls, 5 * 13);
  EXPECT_EQ(model::param_digest(st.student.params), model_digest);
  EXPECT_LT(losses.back(), losses.front());
  int non_increasing = 0;
  for (std::size_t e = 1; e < losses.size(); ++e) non_increasing += losses[e] <= losses[e - 1];
  EXPECT_GE(non_increasing, 0.9 * static_cast<double>(losses.size() - 1));
}

TEST(Stage3, ZeroInnerStepsMeansNoBankAndMatchesWrel) {
  Toy toy;
  auto cfg = toy.config(3);
  cfg.stage3.inner_steps = 0;
  EXPECT_FALSE(train::uses_bank(cfg, train::Mode::kLrbWrel));
  auto lrb = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  auto wrel = train::init_state<float>(cfg, train::Mode::kWrel, toy.weak_ids);
  EXPECT_FALSE(lrb.bank.has_value());
  train::run_pipeline<float>(cfg, train::Mode::kLrbWrel, lrb, toy.data);
  train::run_pipeline<float>(cfg, train::Mode::kWrel, wrel, toy.data);
  EXPECT_EQ(digest(lrb), digest(wrel));
}

TEST(Stage3, BankIsConstantWithoutCalibration) {
  Toy toy;
  auto cfg = toy.config(4);
  auto st = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::run_pipeline<float>(cfg, train::Mode::kLrbWrel, st, toy.data, {}, train::Phase::kStage2);
  cfg.stage3.inner_steps = 0;  // calibration disabled inside stage 3 only
  const auto bank = *st.bank;
  train::stage3_joint<float>(cfg, st, train::stage3_examples(toy.data, train::Mode::kLrbWrel));
  EXPECT_EQ(*st.bank, bank);
}

TEST(Stage3, TracedRunHonoursEveryContract) {
  Toy toy;
  auto cfg = toy.config(7);
  const auto mixed = train::stage3_examples(toy.data, train::Mode::kLrbWrel);
  ASSERT_EQ(mixed.size(), 40u);  // 20 steps at batch 2
  auto st = train::init_state<double>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::run_pipeline<double>(cfg, train::Mode::kLrbWrel, st, toy.data, {}, train::Phase::kStage2);
  const auto theta0 = st.student.params;

  std::vector<nn::ParamSet<double>> students;
  std::vector<double> alphas;
  std::string teacher_after_previous = model::param_digest(theta0);
  int steps = 0, calibrated = 0, with_weak = 0;
  train::Hooks<double> hooks;
  hooks.on_step = [&](const train::StepTrace& tr, const train::TrainerState<double>& s) {
    EXPECT_EQ(tr.t, steps);
    EXPECT_EQ(tr.teacher_before_calibration, teacher_after_previous) << "step " << tr.t;
    EXPECT_EQ(tr.teacher_before_calibration, tr.teacher_after_calibration) << "step " << tr.t;
    EXPECT_EQ(tr.bank_grad_max_abs, 0.0) << "step " << tr.t;
    EXPECT_EQ(tr.bank_before_update, tr.bank_after_update) << "step " << tr.t;
    if (tr.weak_in_batch > 0) {
      ++with_weak;
      EXPECT_GT(tr.gate_grad_norm, 0.0) << "step " << tr.t;
    }
    calibrated += tr.calibrated;
    teacher_after_previous = model::param_digest(s.teacher.params);
    students.push_back(s.student.params);
    alphas.push_back(tr.alpha);
    ++steps;
  };
  train::stage3_joint<double>(cfg, st, mixed, hooks);
  EXPECT_EQ(steps, 20);
  EXPECT_GT(with_weak, 0);
  EXPECT_EQ(calibrated, with_weak);

  // Independent EMA replay over the recorded student snapshots.
  auto replay = theta0;
  for (std::size_t k = 0; k < students.size(); ++k) {
    const double a = std::min(cfg.stage3.alpha_max, 1.0 - 1.0 / static_cast<double>(k + 1));
    EXPECT_EQ(alphas[k], a);
    for (std::size_t i = 0; i < replay.size(); ++i)
      for (std::size_t j = 0; j < replay[i].size(); ++j)
        replay[i][j] = a * replay[i][j] + (1 - a) * students[k][i][j];
  }
  double worst = 0;
  for (std::size_t i = 0; i < replay.size(); ++i)
    for (std::size_t j = 0; j < replay[i].size(); ++j)
      worst = std::max(worst, std::abs(replay[i][j] - st.teacher.params[i][j]));
  EXPECT_LE(worst, 1e-12);
}

TEST(Stage3, UpdateFrequencySkipsCalibration) {
  Toy toy;
  auto cfg = toy.config(8);
  cfg.stage3.update_freq = 3;
  auto st = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::run_pipeline<float>(cfg, train::Mode::kLrbWrel, st, toy.data, {}, train::Phase::kStage2);
  train::Hooks<float> hooks;
  hooks.on_step = [&](const train::StepTrace& tr, const train::TrainerState<float>&) {
    if (tr.t % 3 != 0) {
      EXPECT_FALSE(tr.calibrated) << tr.t;
    } else {
      EXPECT_EQ(tr.calibrated, tr.weak_in_batch > 0) << tr.t;
    }
  };
  train::stage3_joint<float>(cfg, st, train::stage3_examples(toy.data, train::Mode::kLrbWrel), hooks);
}

TEST(Stage3, EmptyMixedSplitIsAnError) {
  Toy toy;
  const auto cfg = toy.config();
  auto st = train::init_state<float>(cfg, train::Mode::kWrel, {});
  EXPECT_THROW(train::stage3_joint<float>(cfg, st, {}), Error);
}

TEST(Stage3, NonFiniteLossAborts) {
  Toy toy;
  const auto cfg = toy.config();
  auto st = train::init_state<float>(cfg, train::Mode::kWrel, toy.weak_ids);
  auto head = st.student.params[st.student.params.size() - 1];
  head[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train::stage3_joint<float>(cfg, st, train::stage3_examples(toy.data, train::Mode::kWrel));
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Error::Kind::kRuntime);
  }
}

TEST(Pipeline, ModesSelectTheirData) {
  Toy toy;
  EXPECT_EQ(train::stage3_examples(toy.data, train::Mode::kOnlyAccurate).size(), toy.data.accurate.size());
  EXPECT_EQ(train::stage3_examples(toy.data, train::Mode::kWrel).size(), 40u);
  const auto cfg = toy.config(9);
  auto oa = train::init_state<float>(cfg, train::Mode::kOnlyAccurate, toy.weak_ids);
  EXPECT_FALSE(oa.bank.has_value());
  train::run_pipeline<float>(cfg, train::Mode::kOnlyAccurate, oa, toy.data);
  EXPECT_EQ(oa.t, train::batches_per_epoch(toy.data.accurate.size(), cfg.stage3.batch));
}

TEST(Checkpoint, RoundTripAndResumeReproduceTheTrajectory) {
  Toy toy;
  auto cfg = toy.config(10);
  cfg.stage3.epochs = 3;
  const auto mode = train::Mode::kLrbWrel;

  auto straight = train::init_state<float>(cfg, mode, toy.weak_ids);
  train::run_pipeline<float>(cfg, mode, straight, toy.data);

  TempDir dir("ckpt");
  auto first = train::init_state<float>(cfg, mode, toy.weak_ids);
  train::Hooks<float> hooks;
  hooks.on_epoch = [&](const train::EpochRecord& r, const train::TrainerState<float>& s) {
    if (r.phase == train::Phase::kStage3 && r.epoch == 1) train::save_checkpoint<float>(dir.path / "mid", s, mode);
  };
  train::run_pipeline<float>(cfg, mode, first, toy.data, hooks);
  EXPECT_EQ(digest(first), digest(straight));

  auto resumed = train::load_checkpoint<float>(dir.path / "mid", cfg);
  EXPECT_EQ(resumed.phase, train::Phase::kStage3);
  EXPECT_EQ(resumed.epoch, 1);
  EXPECT_EQ(train::read_checkpoint_index(dir.path / "mid").at("mode"), "lrb-wrel");
  train::run_pipeline<float>(cfg, mode, resumed, toy.data);
  EXPECT_EQ(resumed.t, straight.t);
  EXPECT_EQ(digest(resumed), digest(straight));
}

TEST(Checkpoint, StateSurvivesSaveAndLoad) {
  Toy toy;
  const auto cfg = toy.config(11);
  auto st = train::init_state<float>(cfg, train::Mode::kLrbWrel, toy.weak_ids);
  train::run_pipeline<float>(cfg, train::Mode::kLrbWrel, st, toy.data);
  TempDir dir("state");
  train::save_checkpoint<float>(dir.path / "c", st, train::Mode::kLrbWrel);
  const auto back = train::load_checkpoint<float>(dir.path / "c", cfg);
  EXPECT_EQ(back.student.params, st.student.params);
  EXPECT_EQ(back.teacher.params, st.teacher.params);
  EXPECT_EQ(*back.bank, *st.bank);
  EXPECT_EQ(back.optimizer.first_moment(), st.optimizer.first_moment());
  EXPECT_EQ(back.optimizer.second_moment(), st.optimizer.second_moment());
  EXPECT_EQ(back.optimizer.steps(), st.optimizer.steps());
  EXPECT_EQ(back.t, st.t);
  auto other = cfg;
  other.net.text.dim = 16;
  EXPECT_THROW(train::load_checkpoint<float>(dir.path / "c", other), Error);
  EXPECT_THROW(train::load_checkpoint<float>(dir.path / "missing", cfg), Error);
}
