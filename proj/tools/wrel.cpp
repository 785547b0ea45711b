// wrel: dataset generation, splitting, three-stage training, evaluation,
// ablation sweeps and the bound probe.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wrel/cli/config_file.hpp"
#include "wrel/cli/run.hpp"
#include "wrel/cli/svg.hpp"
#include "wrel/data/manifest.hpp"
#include "wrel/data/split.hpp"
#include "wrel/data/synthetic.hpp"
#include "wrel/metrics/metrics.hpp"
#include "wrel/theory/probe.hpp"
#include "wrel/train/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace wrel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPartial = 3;

int exit_code(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::kConfig:
    case Error::Kind::kIo:
    case Error::Kind::kParse: return kExitUsage;
    default: return kExitRuntime;
  }
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool nonempty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

/// Prepares `out` for fresh output: refuses a non-empty directory unless forced.
void claim_dir(const fs::path& out, bool force) {
  if (nonempty_dir(out)) {
    if (!force) throw ConfigError(out.string() + " exists and is not empty (use --force)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

/// "--a.b=v" and "--a.b v" leftovers become dotted overrides.
std::vector<std::string> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw ConfigError("unexpected argument '" + a + "'");
    auto body = a.substr(2);
    if (body.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw ConfigError("override " + a + " needs a value");
      body += "=" + extras[++i];
    }
    out.push_back(body);
  }
  return out;
}

cli::RunConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  return path.empty() ? cli::parse_config("", overrides) : cli::load_config(path, overrides);
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int n = 0, n_val = 0, n_test = 0;
  std::uint64_t seed = 0;
  double q = 1.0;
  int grid = 48;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  data::SyntheticSceneConfig sc;
  sc.seed = a.seed;
  sc.corruption = a.q;
  sc.grid_size = a.grid;
  sc.validate();
  const auto m = data::generate_benchmark(sc, a.n, a.n_val, a.n_test);
  claim_dir(a.out, a.force);
  data::write_dataset(a.out, m);
  std::printf("wrote %zu samples to %s\n", m.samples.size(), a.out.c_str());
  return kExitOk;
}

// ---- split -----------------------------------------------------------------

struct SplitArgs {
  std::string dataset, out;
  int ratio = 10;
  std::optional<double> ratio_custom;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& a) {
  double ratio = 0;
  if (a.ratio_custom) {
    ratio = *a.ratio_custom;
    if (!(ratio > 0 && ratio < 1)) throw ConfigError("--ratio-custom must lie in (0, 1)");
  } else {
    if (a.ratio != 10 && a.ratio != 30 && a.ratio != 50)
      throw ConfigError("--ratio must be 10, 30 or 50 (use --ratio-custom for other values)");
    ratio = a.ratio / 100.0;
  }
  if (!fs::exists(fs::path(a.dataset) / "manifest.jsonl"))
    throw IoError("no dataset at " + a.dataset);
  const auto train_m = data::read_dataset(a.dataset).partition("train");
  const auto split = data::stratified_split(train_m, {ratio, a.seed, true});
  const fs::path out = a.out.empty() ? fs::path(a.dataset) / "split.json" : fs::path(a.out);
  data::write_split(out, split);
  std::printf("%zu accurate / %zu weak -> %s\n", split.accurate.size(), split.weak.size(), out.c_str());
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, stage = "all", mode, out, resume, dataset, split;
  int checkpoint_every = 0;
  bool force = false, plot = false;
  std::vector<std::string> extras;
};

void plot_run(const fs::path& out, const std::vector<nlohmann::json>& records) {
  std::vector<cli::Series> loss(3);
  cli::Series student{"student val mIoU", {}}, teacher{"teacher val mIoU", {}};
  for (int p = 0; p < 3; ++p) loss[p].label = "stage " + std::to_string(p + 1) + " loss";
  for (const auto& r : records) {
    loss[r.at("phase").get<int>() - 1].values.push_back(r.at("train_loss").get<double>());
    if (r.at("phase").get<int>() == 3 && r.contains("student")) {
      student.values.push_back(r.at("student").at("mIoU").get<double>());
      teacher.values.push_back(r.at("teacher").at("mIoU").get<double>());
    }
  }
  std::erase_if(loss, [](const cli::Series& s) { return s.values.empty(); });
  cli::line_chart(out / "loss.svg", "training loss per epoch", loss);
  if (!student.values.empty()) cli::line_chart(out / "val_miou.svg", "stage-3 val mIoU", {student, teacher});
}

int cmd_train(const TrainArgs& a) {
  auto overrides = dotted_overrides(a.extras);
  if (!a.dataset.empty()) overrides.push_back("data.dataset=\"" + a.dataset + "\"");
  if (!a.split.empty()) overrides.push_back("data.split=\"" + a.split + "\"");
  if (!a.mode.empty()) overrides.push_back("train.mode=\"" + a.mode + "\"");
  const auto cfg = config_from(a.config, overrides);
  const auto mode = train::parse_mode(cfg.mode);
  cli::RunOptions opt;
  opt.stage = cli::parse_stage(a.stage);
  opt.out = a.out;
  opt.checkpoint_every = a.checkpoint_every;
  if (!a.resume.empty()) opt.resume = fs::path(a.resume);
  if (!opt.resume) claim_dir(opt.out, a.force);
  opt.on_record = [](const nlohmann::json& r) {
    std::printf("stage %d epoch %3d  loss %.5f", r.at("phase").get<int>(), r.at("epoch").get<int>(),
                r.at("train_loss").get<double>());
    if (r.contains("student"))
      std::printf("  val mIoU student %.2f teacher %.2f", r.at("student").at("mIoU").get<double>(),
                  r.at("teacher").at("mIoU").get<double>());
    std::printf("\n");
    std::fflush(stdout);
  };
  const auto ws = cli::prepare(cfg);
  const auto res = cli::train_run(cfg, mode, *ws, opt);
  if (a.plot) plot_run(opt.out, res.records);
  if (!ws->val_examples.empty()) {
    std::printf("\nval (student)\n%s", res.student.table().c_str());
    std::printf("val (teacher)\n%s", res.teacher.table().c_str());
  }
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, split = "val", which = "student", config, out;
};

int cmd_eval(const EvalArgs& a) {
  if (a.which != "student" && a.which != "teacher") throw ConfigError("--which must be student or teacher");
  const fs::path ckpt(a.ckpt);
  const auto idx = train::read_checkpoint_index(ckpt);
  const fs::path run = ckpt.parent_path();
  const auto cfg = a.config.empty() ? cli::load_config(run / "config.toml") : cli::load_config(a.config);
  std::optional<text::Vocabulary> vocab;
  if (fs::exists(run / "vocab.json"))
    vocab = text::Vocabulary::from_json(nlohmann::json::parse(read_text(run / "vocab.json")));
  const auto ws = cli::prepare(cfg, vocab ? &*vocab : nullptr);
  const auto items = ws->examples(a.split);
  if (items.empty()) throw ConfigError("split '" + a.split + "' is empty in this dataset");
  metrics::MetricsReport rep;
  if (idx.value("kind", "model") == "oracle") {
    rep = metrics::evaluate<model::Example>(
        items,
        [](const model::Example& ex) {
          std::vector<float> logits(ex.mask.size());
          for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = ex.mask[i] ? 1.0f : -1.0f;
          return logits;
        },
        a.split);
  } else {
    const auto st = train::load_checkpoint<float>(ckpt, cli::resolved_train(cfg, *ws));
    rep = train::evaluate_network<float>(a.which == "student" ? st.student : st.teacher, items, a.split);
  }
  auto j = rep.to_json();
  j["checkpoint"] = ckpt.filename().string();
  j["which"] = a.which;
  if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
  std::printf("%s\n\n%s", j.dump(2).c_str(), rep.table().c_str());
  return kExitOk;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string config, knob, out;
  bool force = false, plot = false;
  std::vector<std::string> extras;
};

struct Knob {
  const char* name;
  const char* header;
  std::vector<int> values;
  void (*apply)(cli::RunConfig&, int);
};

const Knob& find_knob(const std::string& name) {
  static const std::vector<Knob> knobs{
      {"steps", "Step", {0, 1, 3, 5}, [](cli::RunConfig& c, int v) { c.train.stage3.inner_steps = v; }},
      {"freq", "Freq", {1, 3, 5}, [](cli::RunConfig& c, int v) { c.train.stage3.update_freq = v; }},
      {"warmup", "Epoch", {10, 15, 20}, [](cli::RunConfig& c, int v) { c.train.stage1.epochs = v; }},
  };
  for (const auto& k : knobs)
    if (name == k.name) return k;
  throw ConfigError("unknown knob '" + name + "' (expected steps, freq or warmup)");
}

int cmd_ablate(const AblateArgs& a) {
  const auto& knob = find_knob(a.knob);
  auto base = config_from(a.config, dotted_overrides(a.extras));
  base.mode = "lrb-wrel";
  claim_dir(a.out, a.force);
  const auto ws = cli::prepare(base);
  nlohmann::json rep{{"knob", knob.name}, {"values", knob.values}, {"rows", nlohmann::json::array()}};
  std::string table = metrics::MetricsReport::table_header(knob.header) + "\n";
  std::string latex = std::string(knob.header) + " & P@0.5 & P@0.6 & P@0.7 & P@0.8 & P@0.9 & oIOU & mIOU \\\\\n";
  std::vector<std::string> labels;
  std::vector<double> mious;
  for (int v : knob.values) {
    auto cfg = base;
    knob.apply(cfg, v);
    cfg.validate();
    cli::RunOptions opt;
    opt.eval_each_epoch = false;
    const auto res = cli::train_run(cfg, train::Mode::kLrbWrel, *ws, opt);
    auto row = res.student.to_json();
    row["value"] = v;
    row["teacher_mIoU"] = res.teacher.miou;
    rep["rows"].push_back(row);
    table += res.student.table_row(std::to_string(v)) + "\n";
    latex += std::to_string(v);
    for (double p : res.student.precision) latex += " & " + metrics::MetricsReport::fixed2(p);
    latex += " & " + metrics::MetricsReport::fixed2(res.student.oiou) + " & " +
             metrics::MetricsReport::fixed2(res.student.miou) + " \\\\\n";
    labels.push_back(std::string(knob.header) + "=" + std::to_string(v));
    mious.push_back(res.student.miou);
    std::printf("%s\n", table.c_str());
    std::fflush(stdout);
  }
  const auto stem = std::string("ablation-") + knob.name;
  write_text(fs::path(a.out) / "config.toml", cli::to_toml(base));
  write_text(fs::path(a.out) / (stem + ".json"), rep.dump(2) + "\n");
  write_text(fs::path(a.out) / (stem + ".txt"), table);
  write_text(fs::path(a.out) / (stem + ".tex"), latex);
  if (a.plot) cli::bar_chart(fs::path(a.out) / (stem + ".svg"), std::string("val mIoU by ") + knob.header, labels, mious);
  return kExitOk;
}

// ---- bound-probe -----------------------------------------------------------

struct ProbeArgs {
  std::string config, out;
  bool force = false, plot = false;
  std::vector<std::string> extras;
};

int cmd_bound_probe(const ProbeArgs& a) {
  const auto cfg = config_from(a.config, dotted_overrides(a.extras));
  claim_dir(a.out, a.force);
  const auto rep = theory::sweep(cfg.resolved_probe(), [](const theory::ProbeCell& c) {
    if (c.ok)
      std::printf("q %.2f  n_w %4d  seed %llu  eps %.4f  gap %+.5f\n", c.q, c.n_w,
                  static_cast<unsigned long long>(c.seed), c.epsilon, c.gap);
    else
      std::printf("q %.2f  n_w %4d  seed %llu  FAILED: %s\n", c.q, c.n_w, static_cast<unsigned long long>(c.seed),
                  c.error.c_str());
    std::fflush(stdout);
  });
  const fs::path out(a.out);
  write_text(out / "config.toml", cli::to_toml(cfg));
  write_text(out / "bound_report.json", rep.to_json().dump(2) + "\n");
  write_text(out / "bound_cells.csv", rep.csv());
  if (a.plot && !rep.q_values.empty()) {
    std::vector<std::string> labels;
    for (double q : rep.q_values) labels.push_back("q=" + metrics::MetricsReport::fixed2(q));
    cli::bar_chart(out / "epsilon_by_q.svg", "mean epsilon by q", labels, rep.mean_epsilon);
    cli::line_chart(out / "gap_by_q.svg", "mean risk gap by q", {{"gap", rep.mean_gap}});
  }
  std::printf("epsilon strictly increasing: %s\n", rep.epsilon_strictly_increasing() ? "yes" : "no");
  if (rep.spearman_gap_epsilon) std::printf("spearman(gap, epsilon): %.3f\n", *rep.spearman_gap_epsilon);
  if (rep.degenerate) std::printf("report is degenerate: too few cells for trends\n");
  if (rep.missing > 0) {
    std::fprintf(stderr, "%d cells failed\n", rep.missing);
    return kExitPartial;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly referring expression learning toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic referring segmentation dataset");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--n", sa.n, "number of train samples")->required();
  synth->add_option("--n-val", sa.n_val, "number of val samples");
  synth->add_option("--n-test", sa.n_test, "number of test samples");
  synth->add_option("--seed", sa.seed, "generator seed");
  synth->add_option("--q", sa.q, "attribute-drop probability of the weak expressions");
  synth->add_option("--grid-size", sa.grid, "image side length");
  synth->add_flag("--force", sa.force, "replace a non-empty output directory");

  SplitArgs pa;
  auto* split = app.add_subcommand("split", "category-level accurate/weak split of the train partition");
  split->add_option("--dataset", pa.dataset, "dataset directory")->required();
  split->add_option("--ratio", pa.ratio, "accurate percentage: 10, 30 or 50");
  split->add_option("--ratio-custom", pa.ratio_custom, "any accurate fraction in (0, 1)");
  split->add_option("--seed", pa.seed, "split seed");
  split->add_option("--out", pa.out, "output file (default <dataset>/split.json)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "run training stages");
  trn->add_option("--config", ta.config, "TOML config");
  trn->add_option("--stage", ta.stage, "warmup, lrb, joint or all");
  trn->add_option("--mode", ta.mode, "only-accurate, wrel or lrb-wrel");
  trn->add_option("--out", ta.out, "run directory")->required();
  trn->add_option("--resume", ta.resume, "checkpoint directory to continue from");
  trn->add_option("--dataset", ta.dataset, "dataset directory (overrides data.dataset)");
  trn->add_option("--split", ta.split, "split file (overrides data.split)");
  trn->add_option("--checkpoint-every", ta.checkpoint_every, "also checkpoint every k epochs");
  trn->add_flag("--force", ta.force, "replace a non-empty run directory");
  trn->add_flag("--plot", ta.plot, "write SVG loss and metric curves");
  trn->allow_extras();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ea.ckpt, "checkpoint directory")->required();
  ev->add_option("--split", ea.split, "val or test");
  ev->add_option("--which", ea.which, "student or teacher");
  ev->add_option("--config", ea.config, "config (default: the run's config.toml)");
  ev->add_option("--out", ea.out, "also write the JSON report here");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "sweep one LRB knob");
  abl->add_option("--config", aa.config, "TOML config");
  abl->add_option("--knob", aa.knob, "steps, freq or warmup")->required();
  abl->add_option("--out", aa.out, "report directory")->required();
  abl->add_flag("--force", aa.force, "replace a non-empty report directory");
  abl->add_flag("--plot", aa.plot, "write an SVG bar chart");
  abl->allow_extras();

  ProbeArgs ba;
  auto* probe = app.add_subcommand("bound-probe", "risk gap versus approximation error sweep");
  probe->add_option("--config", ba.config, "TOML config");
  probe->add_option("--out", ba.out, "report directory")->required();
  probe->add_flag("--force", ba.force, "replace a non-empty report directory");
  probe->add_flag("--plot", ba.plot, "write SVG charts");
  probe->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*split) return cmd_split(pa);
    if (*trn) {
      ta.extras = trn->remaining();
      return cmd_train(ta);
    }
    if (*ev) return cmd_eval(ea);
    if (*abl) {
      aa.extras = abl->remaining();
      return cmd_ablate(aa);
    }
    if (*probe) {
      ba.extras = probe->remaining();
      return cmd_bound_probe(ba);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
