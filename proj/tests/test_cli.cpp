#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "test_support.hpp"
#include "wrel/cli/config_file.hpp"
#include "wrel/data/manifest.hpp"

using namespace wrel;
using wrel::testing::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"(
[synth]
seed = 3
grid_size = 16
max_instances = 2
n_train = 40
n_val = 10

[split]
ratio = 0.25
seed = 1

[model]
seq_len = 12
token_dim = 8
ref_dim = 8
conv1 = 4
conv2 = 6
fused = 6
up1 = 4
prompts = 2

[train]
seed = 5

[train.stage1]
epochs = 2
lr = 3e-3
batch = 4

[train.stage2]
epochs = 2
prompt_lr = 50.0
batch = 4

[train.stage3]
epochs = 2
lr = 3e-3
prompt_lr = 50.0
batch = 4

[probe]
q_grid = [0.5]
seeds = [1]
n_train = 30
n_eval = 6
accurate_ratio = 0.3
grid_size = 16
epochs = 1
)";

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

/// Runs the CLI with `args`, output captured to `dir/log.txt`; returns the exit status.
int wrel_cli(const fs::path& dir, const std::string& args) {
  const auto cmd = std::string(WREL_CLI_PATH) + " " + args + " > " + (dir / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Concatenated bytes of every regular file under `dir`, in path order.
std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + read(f);
  return all;
}

struct Cli : ::testing::Test {
  TempDir dir{"cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name())};
  fs::path config() {
    const auto p = dir.path / "tiny.toml";
    if (!fs::exists(p)) write(p, kTinyConfig);
    return p;
  }
  int run(const std::string& args) { return wrel_cli(dir.path, args); }
  std::string log() { return read(dir.path / "log.txt"); }
};

}  // namespace

TEST(Config, DefaultsAreValid) {
  const auto c = cli::parse_config("");
  EXPECT_EQ(c.train.stage1.epochs, 15);
  EXPECT_EQ(c.mode, "lrb-wrel");
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(cli::parse_config("[train]\nlearning_rate = 1.0\n"), Error);
  EXPECT_THROW(cli::parse_config("[colour]\nx = 1\n"), Error);
  EXPECT_THROW(cli::parse_config("[train.stage1]\nepochs = \"ten\"\n"), Error);
  EXPECT_THROW(cli::parse_config("[train.stage1]\nepochs = 1.5\n"), Error);
  EXPECT_THROW(cli::parse_config("[train]\nmode = \"fast\"\n"), Error);
  EXPECT_THROW(cli::parse_config("[train.stage1\n"), Error);
  try {
    cli::parse_config("[loss]\nlambda = 1\nweight = 2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Error::Kind::kConfig);
    EXPECT_NE(std::string(e.what()).find("loss.weight"), std::string::npos);
  }
}

TEST(Config, OverridesAndRoundTrip) {
  const auto c = cli::parse_config(kTinyConfig, {"train.stage3.lr=1e-3", "train.mode=wrel", "loss.lambda=0.25"});
  EXPECT_EQ(c.train.stage3.lr, 1e-3);
  EXPECT_EQ(c.mode, "wrel");
  EXPECT_EQ(c.train.lambda, 0.25);
  EXPECT_EQ(c.train.net.text.dim, 8);
  EXPECT_EQ(c.probe.q_grid, std::vector<double>{0.5});
  const auto text = cli::to_toml(c);
  EXPECT_EQ(cli::to_toml(cli::parse_config(text)), text);
  EXPECT_THROW(cli::parse_config("", {"train.stage3.lr"}), Error);
  EXPECT_THROW(cli::parse_config("", {"train.nonsense=1"}), Error);
}

TEST_F(Cli, SynthIsDeterministicAndValidatesArguments) {
  ASSERT_EQ(run("synth --out " + (dir.path / "a").string() + " --n 12 --seed 7 --grid-size 16"), 0) << log();
  ASSERT_EQ(run("synth --out " + (dir.path / "b").string() + " --n 12 --seed 7 --grid-size 16"), 0) << log();
  EXPECT_EQ(tree_bytes(dir.path / "a"), tree_bytes(dir.path / "b"));
  EXPECT_EQ(run("synth --out " + (dir.path / "a").string() + " --n 12 --seed 7 --grid-size 16"), 1);
  EXPECT_EQ(run("synth --out " + (dir.path / "a").string() + " --n 12 --seed 8 --grid-size 16 --force"), 0);
  EXPECT_NE(tree_bytes(dir.path / "a"), tree_bytes(dir.path / "b"));
  EXPECT_EQ(run("synth --out " + (dir.path / "c").string() + " --n 0"), 1);
  EXPECT_EQ(run("synth --out " + (dir.path / "c").string() + " --n 5 --q 2"), 1);

  ASSERT_EQ(run("synth --out " + (dir.path / "q1").string() + " --n 20 --q 1.0 --grid-size 16"), 0);
  for (const auto& s : data::read_dataset(dir.path / "q1").samples) EXPECT_EQ(s.weak_expression, s.category);
}

TEST_F(Cli, SplitOfABalancedDataset) {
  data::DatasetManifest m;
  const std::vector<std::string> classes{"circle", "square", "triangle", "cross", "bar"};
  for (int i = 0; i < 100; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%03d", i);
    m.samples.push_back(wrel::testing::labelled_sample(id, classes[i % 5]));
    m.categories.insert(classes[i % 5]);
  }
  const auto ds = dir.path / "ds";
  data::write_dataset(ds, m);
  ASSERT_EQ(run("split --dataset " + ds.string() + " --ratio 10 --seed 4"), 0) << log();
  const auto first = read(ds / "split.json");
  const auto split = data::read_split(ds / "split.json");
  EXPECT_EQ(split.accurate.size(), 10u);
  EXPECT_EQ(split.weak.size(), 90u);
  ASSERT_EQ(run("split --dataset " + ds.string() + " --ratio 10 --seed 4"), 0);
  EXPECT_EQ(read(ds / "split.json"), first);

  EXPECT_EQ(run("split --dataset " + ds.string() + " --ratio 20"), 1);
  EXPECT_EQ(run("split --dataset " + ds.string() + " --ratio-custom 0.2 --out " + (dir.path / "s.json").string()),
            0);
  EXPECT_EQ(data::read_split(dir.path / "s.json").accurate.size(), 20u);
  EXPECT_EQ(run("split --dataset " + (dir.path / "missing").string()), 1);
}

TEST_F(Cli, TrainStagesEvalAndResume) {
  const auto cfg = config();
  const auto all = dir.path / "all";
  ASSERT_EQ(run("train --config " + cfg.string() + " --stage all --checkpoint-every 1 --out " + all.string()), 0)
      << log();
  for (const char* f : {"config.toml", "vocab.json", "manifest.json", "metrics.jsonl", "stage1-epoch2/index.json",
                        "stage2-epoch2/index.json", "stage3-epoch2/index.json"})
    EXPECT_TRUE(fs::exists(all / f)) << f;
  const auto manifest = nlohmann::json::parse(read(all / "manifest.json"));

  // Joint in lrb-wrel mode needs the stage-2 bank.
  EXPECT_EQ(run("train --config " + cfg.string() + " --stage joint --out " + (dir.path / "j").string()), 1);
  EXPECT_EQ(run("train --config " + cfg.string() + " --stage joint --resume " + (all / "stage1-epoch2").string() +
                " --out " + (dir.path / "j").string()),
            1);

  // Stage by stage through checkpoints ends on the same weights.
  const auto staged = dir.path / "staged";
  ASSERT_EQ(run("train --config " + cfg.string() + " --stage warmup --out " + staged.string()), 0) << log();
  ASSERT_EQ(run("train --config " + cfg.string() + " --stage lrb --resume " + (staged / "stage1-epoch2").string() +
                " --out " + staged.string()),
            0)
      << log();
  ASSERT_EQ(run("train --config " + cfg.string() + " --stage joint --resume " + (staged / "stage2-epoch2").string() +
                " --out " + staged.string()),
            0)
      << log();
  const auto staged_manifest = nlohmann::json::parse(read(staged / "manifest.json"));
  EXPECT_EQ(staged_manifest["final"], manifest["final"]);

  // Resume mid-stage-3.
  const auto mid = dir.path / "mid";
  ASSERT_EQ(run("train --config " + cfg.string() + " --stage all --resume " + (all / "stage3-epoch1").string() +
                " --out " + mid.string()),
            0)
      << log();
  const auto mid_manifest = nlohmann::json::parse(read(mid / "manifest.json"));
  EXPECT_EQ(mid_manifest["val"], manifest["val"]);
  EXPECT_EQ(mid_manifest["final"], manifest["final"]);

  // Evaluation: student and teacher are reported separately; bad checkpoints fail.
  const auto ckpt = (all / "stage3-epoch2").string();
  ASSERT_EQ(run("eval --ckpt " + ckpt + " --which student --out " + (dir.path / "s.json").string()), 0) << log();
  ASSERT_EQ(run("eval --ckpt " + ckpt + " --which teacher --out " + (dir.path / "t.json").string()), 0) << log();
  const auto s = nlohmann::json::parse(read(dir.path / "s.json"));
  const auto t = nlohmann::json::parse(read(dir.path / "t.json"));
  EXPECT_EQ(s["which"], "student");
  EXPECT_EQ(t["which"], "teacher");
  EXPECT_NEAR(s["mIoU"].get<double>(), manifest["val"]["student"]["mIoU"].get<double>(), 1e-9);
  EXPECT_NEAR(t["mIoU"].get<double>(), manifest["val"]["teacher"]["mIoU"].get<double>(), 1e-9);
  EXPECT_EQ(run("eval --ckpt " + (all / "stage9-epoch1").string()), 1);
  EXPECT_EQ(run("eval --ckpt " + ckpt + " --which both"), 1);
  EXPECT_EQ(run("eval --ckpt " + ckpt + " --split train"), 1);

  // An oracle checkpoint scores 100 everywhere.
  fs::create_directories(all / "oracle");
  write(all / "oracle" / "index.json", R"({"kind": "oracle"})");
  ASSERT_EQ(run("eval --ckpt " + (all / "oracle").string()), 0) << log();
  const auto out = log();
  for (const char* col : {"\"P@0.5\": 100.0", "\"P@0.9\": 100.0", "\"oIoU\": 100.0", "\"mIoU\": 100.0"})
    EXPECT_NE(out.find(col), std::string::npos) << col;
  EXPECT_LT(out.find("P@0.5  "), out.find("oIoU  "));
}

TEST_F(Cli, TrainIsDeterministic) {
  const auto cfg = config();
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir.path / "a").string()), 0) << log();
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir.path / "b").string()), 0) << log();
  for (const char* f :
       {"manifest.json", "metrics.jsonl", "config.toml", "stage3-epoch2/student.f32", "stage3-epoch2/bank.f32"}) {
    ASSERT_TRUE(fs::exists(dir.path / "a" / f)) << f;
    EXPECT_EQ(read(dir.path / "a" / f), read(dir.path / "b" / f)) << f;
  }
  EXPECT_EQ(run("train --config " + cfg.string() + " --out " + (dir.path / "a").string()), 1);
  EXPECT_EQ(run("train --config " + cfg.string() + " --mode fast --out " + (dir.path / "c").string()), 1);
  EXPECT_EQ(run("train --config " + cfg.string() + " --stage everything --out " + (dir.path / "c").string()), 1);
  EXPECT_EQ(run("train --config " + (dir.path / "none.toml").string() + " --out " + (dir.path / "c").string()), 1);
}

TEST_F(Cli, WrelMatchesLrbWrelWithoutInnerSteps) {
  const auto cfg = config();
  ASSERT_EQ(run("train --config " + cfg.string() + " --mode wrel --out " + (dir.path / "w").string()), 0) << log();
  ASSERT_EQ(run("train --config " + cfg.string() + " --mode lrb-wrel --out " + (dir.path / "k0").string() +
                " --train.stage3.inner_steps=0"),
            0)
      << log();
  const auto w = nlohmann::json::parse(read(dir.path / "w" / "manifest.json"));
  const auto k0 = nlohmann::json::parse(read(dir.path / "k0" / "manifest.json"));
  EXPECT_EQ(w["val"], k0["val"]);
  EXPECT_EQ(w["final"]["student"], k0["final"]["student"]);
  EXPECT_EQ(k0["final"]["bank"], "");
}

TEST_F(Cli, AblateValidatesTheKnob) {
  EXPECT_EQ(run("ablate --config " + config().string() + " --knob lr --out " + (dir.path / "x").string()), 1);
  EXPECT_NE(log().find("unknown knob"), std::string::npos);
}

TEST_F(Cli, BoundProbeSingleCellIsDegenerate) {
  const auto out = dir.path / "probe";
  ASSERT_EQ(run("bound-probe --config " + config().string() + " --out " + out.string()), 0) << log();
  const auto rep = nlohmann::json::parse(read(out / "bound_report.json"));
  EXPECT_TRUE(rep["degenerate"].get<bool>());
  EXPECT_TRUE(rep["spearman_gap_epsilon"].is_null());
  EXPECT_EQ(rep["cells"].size(), 1u);
  EXPECT_TRUE(fs::exists(out / "bound_cells.csv"));
}

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("synth --n 3"), 1);
}
