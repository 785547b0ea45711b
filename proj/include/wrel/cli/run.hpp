#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/cli/config_file.hpp"
#include "wrel/data/manifest.hpp"
#include "wrel/data/split.hpp"
#include "wrel/data/synthetic.hpp"
#include "wrel/digest.hpp"
#include "wrel/model/example.hpp"
#include "wrel/text/vocabulary.hpp"
#include "wrel/train/checkpoint.hpp"
#include "wrel/train/pipeline.hpp"

namespace wrel::cli {

/// Loaded (or generated) data for one run. Examples view pixels owned by
/// the manifests, so a Workspace is pinned in memory.
struct Workspace {
  data::DatasetManifest train_view;  // split applied: weak samples carry G(c)
  data::DatasetManifest val;
  data::DatasetManifest test;
  data::Split split;
  text::Vocabulary vocab;
  train::TrainData data;
  std::vector<std::string> weak_ids;
  std::vector<model::Example> val_examples;
  std::vector<model::Example> test_examples;
  int grid = 0;
  std::string dataset_digest;

  Workspace() = default;
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  std::span<const model::Example> examples(const std::string& partition) const {
    if (partition == "val") return val_examples;
    if (partition == "test") return test_examples;
    throw ConfigError("unknown evaluation split '" + partition + "' (expected val or test)");
  }
};

inline std::string manifest_digest(const data::DatasetManifest& m) {
  Sha256 h;
  for (const auto& s : m.samples) {
    h.update(s.sample_id).update(s.expression).update(s.weak_expression).update(s.category);
    h.update(std::span<const float>(s.image.rgb));
    h.update(std::span<const std::uint8_t>(s.mask.data));
  }
  return h.finish();
}

/// The full dataset named by the config, or the in-process synthetic benchmark.
inline data::DatasetManifest load_dataset(const RunConfig& c) {
  if (!c.dataset.empty()) return data::read_dataset(c.dataset);
  return data::generate_benchmark(c.synth, c.n_train, c.n_val, c.n_test);
}

/// Builds the workspace; `vocab`, when given, replaces the one derived from the training view.
inline std::unique_ptr<Workspace> prepare(const RunConfig& c, const text::Vocabulary* vocab = nullptr) {
  auto ws = std::make_unique<Workspace>();
  const auto all = load_dataset(c);
  ws->dataset_digest = manifest_digest(all);
  const auto train_m = all.partition("train");
  if (train_m.samples.empty()) throw ConfigError("dataset has no train partition");
  ws->split = c.split_file.empty() ? data::stratified_split(train_m, c.split) : data::read_split(c.split_file);
  ws->train_view = data::apply_split(train_m, ws->split);
  ws->val = all.partition("val");
  ws->test = all.partition("test");
  if (vocab) {
    ws->vocab = *vocab;
  } else {
    std::vector<std::string> exprs;
    for (const auto& s : ws->train_view.samples) exprs.push_back(s.expression);
    ws->vocab = text::Vocabulary::build(exprs, {all.categories.begin(), all.categories.end()});
  }
  ws->grid = ws->train_view.samples.front().image.height;
  for (const auto& s : ws->train_view.samples) {
    auto ex = model::make_example(s, ws->vocab, c.train.net.seq_len);
    if (ex.weak) {
      ws->weak_ids.push_back(ex.id);
      ws->data.weak.push_back(std::move(ex));
    } else {
      ws->data.accurate.push_back(std::move(ex));
    }
  }
  ws->val_examples = model::make_examples(ws->val, ws->vocab, c.train.net.seq_len);
  ws->test_examples = model::make_examples(ws->test, ws->vocab, c.train.net.seq_len);
  return ws;
}

/// The training config with the data-dependent dimensions filled in.
inline train::TrainConfig resolved_train(const RunConfig& c, const Workspace& ws) {
  auto t = c.train;
  t.net.seg.grid = ws.grid;
  t.net.text.vocab = ws.vocab.size();
  return t;
}

enum class StageSel { kWarmup, kLrb, kJoint, kAll };

inline StageSel parse_stage(const std::string& s) {
  if (s == "warmup") return StageSel::kWarmup;
  if (s == "lrb") return StageSel::kLrb;
  if (s == "joint") return StageSel::kJoint;
  if (s == "all") return StageSel::kAll;
  throw ConfigError("unknown stage '" + s + "' (expected warmup, lrb, joint or all)");
}

struct RunOptions {
  StageSel stage = StageSel::kAll;
  std::filesystem::path out;             // empty: nothing is written
  std::optional<std::filesystem::path> resume;
  int checkpoint_every = 0;              // 0: only at stage ends
  bool eval_each_epoch = true;
  std::function<void(const nlohmann::json&)> on_record;
};

struct RunResult {
  train::TrainerState<float> state;
  metrics::MetricsReport student;
  metrics::MetricsReport teacher;
  std::vector<nlohmann::json> records;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

inline int stage_end(train::Phase p, const train::TrainConfig& t) {
  switch (p) {
    case train::Phase::kStage1: return t.stage1.epochs;
    case train::Phase::kStage2: return t.stage2.epochs;
    case train::Phase::kStage3: return t.stage3.epochs;
    default: return 0;
  }
}

}  // namespace detail

/// Trains `mode` on the workspace through the selected stage. With
/// `opt.out` set the run directory receives config.toml, vocab.json,
/// manifest.json, metrics.jsonl and stage{n}-epoch{k} checkpoints.
inline RunResult train_run(const RunConfig& c, train::Mode mode, const Workspace& ws, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  const auto tc = resolved_train(c, ws);
  const auto last = opt.stage == StageSel::kWarmup ? train::Phase::kStage1
                    : opt.stage == StageSel::kLrb  ? train::Phase::kStage2
                                                   : train::Phase::kStage3;
  RunResult res;
  if (opt.resume) {
    const auto idx = train::read_checkpoint_index(*opt.resume);
    if (idx.value("mode", "") != train::to_string(mode))
      throw ConfigError("checkpoint " + opt.resume->string() + " was trained in mode " + idx.value("mode", "?"));
    res.state = train::load_checkpoint<float>(*opt.resume, tc);
  } else if (opt.stage == StageSel::kLrb || opt.stage == StageSel::kJoint) {
    if (opt.stage == StageSel::kJoint && mode == train::Mode::kLrbWrel)
      throw ConfigError("stage joint in lrb-wrel mode needs --resume with a stage-2 bank checkpoint");
    throw ConfigError("stage " + std::string(opt.stage == StageSel::kLrb ? "lrb" : "joint") +
                      " continues a previous stage; pass --resume");
  } else {
    res.state = train::init_state<float>(tc, mode, ws.weak_ids);
  }
  auto& st = res.state;
  if (opt.stage == StageSel::kJoint && mode == train::Mode::kLrbWrel && train::uses_bank(tc, mode) &&
      (st.phase < train::Phase::kStage2 || !st.bank ||
       (st.phase == train::Phase::kStage2 && st.epoch < tc.stage2.epochs)))
    throw ConfigError("stage joint in lrb-wrel mode needs a completed stage-2 bank checkpoint");
  if (opt.stage == StageSel::kLrb && st.phase < train::Phase::kStage1)
    throw ConfigError("stage lrb needs a stage-1 checkpoint");
  if (st.phase > last) throw ConfigError("checkpoint is already past the requested stage");

  const bool writing = !opt.out.empty();
  std::ofstream log;
  if (writing) {
    fs::create_directories(opt.out);
    detail::write_text(opt.out / "config.toml", to_toml(c));
    detail::write_text(opt.out / "vocab.json", ws.vocab.to_json().dump() + "\n");
    log.open(opt.out / "metrics.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + (opt.out / "metrics.jsonl").string());
  }
  const std::string init_digest = model::param_digest(st.student.params);
  std::vector<nlohmann::json> boundaries;

  train::Hooks<float> hooks;
  hooks.on_epoch = [&](const train::EpochRecord& r, const train::TrainerState<float>& s) {
    nlohmann::json j{{"phase", static_cast<int>(r.phase)},
                     {"epoch", r.epoch},
                     {"train_loss", r.train_loss},
                     {"batches", r.batches},
                     {"t", s.t}};
    if (opt.eval_each_epoch && !ws.val_examples.empty()) {
      j["student"] = train::evaluate_network<float>(s.student, ws.val_examples, "val").to_json();
      j["teacher"] = train::evaluate_network<float>(s.teacher, ws.val_examples, "val").to_json();
    }
    if (log.is_open()) log << j.dump() << '\n' << std::flush;
    if (opt.on_record) opt.on_record(j);
    res.records.push_back(j);
    const bool at_end = r.epoch == detail::stage_end(r.phase, tc);
    if (at_end)
      boundaries.push_back({{"phase", static_cast<int>(r.phase)},
                            {"epochs", r.epoch},
                            {"t", s.t},
                            {"student", model::param_digest(s.student.params)},
                            {"teacher", model::param_digest(s.teacher.params)}});
    if (writing && (at_end || (opt.checkpoint_every > 0 && r.epoch % opt.checkpoint_every == 0)))
      train::save_checkpoint<float>(opt.out / train::checkpoint_name(r.phase, r.epoch), s, mode);
  };
  train::run_pipeline<float>(tc, mode, st, ws.data, hooks, last);

  if (!ws.val_examples.empty()) {
    res.student = train::evaluate_network<float>(st.student, ws.val_examples, "val");
    res.teacher = train::evaluate_network<float>(st.teacher, ws.val_examples, "val");
  }
  if (writing) {
    nlohmann::json m{{"mode", train::to_string(mode)},
                     {"seed", tc.seed},
                     {"stage", st.phase == train::Phase::kStage3 ? "joint"
                               : st.phase == train::Phase::kStage2 ? "lrb"
                                                                   : "warmup"},
                     {"resumed_from", opt.resume ? opt.resume->filename().string() : ""},
                     {"dataset_digest", ws.dataset_digest},
                     {"split_digest", sha256(ws.split.to_json().dump())},
                     {"vocab_size", ws.vocab.size()},
                     {"accurate", ws.data.accurate.size()},
                     {"weak", ws.data.weak.size()},
                     {"init_digest", init_digest},
                     {"stage_boundaries", boundaries},
                     {"final",
                      {{"phase", static_cast<int>(st.phase)},
                       {"epoch", st.epoch},
                       {"t", st.t},
                       {"student", model::param_digest(st.student.params)},
                       {"teacher", model::param_digest(st.teacher.params)},
                       {"bank", st.bank ? train::bank_digest(*st.bank) : ""}}}};
    if (!ws.val_examples.empty()) m["val"] = {{"student", res.student.to_json()}, {"teacher", res.teacher.to_json()}};
    detail::write_text(opt.out / "manifest.json", m.dump(2) + "\n");
  }
  return res;
}

}  // namespace wrel::cli
