#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <toml.hpp>

#include "wrel/common.hpp"
#include "wrel/data/split.hpp"
#include "wrel/data/synthetic.hpp"
#include "wrel/theory/probe.hpp"
#include "wrel/train/config.hpp"

namespace wrel::cli {

/// Everything a command can be configured with, from one TOML file.
struct RunConfig {
  // [data]: an on-disk dataset and split; when `dataset` is empty the
  // benchmark is generated in-process from [synth] and split with [split].
  std::string dataset;
  std::string split_file;
  data::SyntheticSceneConfig synth;
  int n_train = 500;
  int n_val = 100;
  int n_test = 0;
  data::SplitSpec split;
  std::string mode = "lrb-wrel";
  train::TrainConfig train;
  theory::BoundProbeConfig probe;

  /// Probe trainings inherit the [train] and [model] blocks.
  theory::BoundProbeConfig resolved_probe() const {
    auto p = probe;
    p.base = train;
    return p;
  }

  void validate() const {
    synth.validate();
    if (dataset.empty() && n_train < 2) throw ConfigError("synth.n_train must be >= 2");
    if (n_val < 0 || n_test < 0) throw ConfigError("synth.n_val and synth.n_test must be >= 0");
    if (!(split.accurate_ratio > 0 && split.accurate_ratio < 1)) throw ConfigError("split.ratio must lie in (0, 1)");
    (void)train::parse_mode(mode);
    train.validate();
    probe.validate();
  }
};

/// Reads fields from, or writes them to, one TOML table. The same visit
/// function drives both directions so the echoed config always matches
/// what was parsed.
class Archive {
 public:
  enum class Dir { kRead, kWrite };

  Archive(toml::table* table, Dir dir, std::set<std::string>* seen, std::string prefix = {})
      : table_(table), dir_(dir), seen_(seen), prefix_(std::move(prefix)) {}

  Archive section(const std::string& name) {
    const auto path = prefix_ + name;
    if (dir_ == Dir::kWrite) {
      table_->insert_or_assign(name, toml::table{});
      return {table_->get(name)->as_table(), dir_, seen_, path + "."};
    }
    if (seen_) seen_->insert(path);
    toml::node* n = table_ ? table_->get(name) : nullptr;
    if (n && !n->is_table()) throw ConfigError("config key '" + path + "' must be a table");
    return {n ? n->as_table() : nullptr, dir_, seen_, path + "."};
  }

  template <typename V>
  void field(const std::string& key, V& v) {
    if (dir_ == Dir::kWrite) {
      write(key, v);
      return;
    }
    if (!table_) return;
    toml::node* n = table_->get(key);
    if (!n) return;
    if (seen_) seen_->insert(prefix_ + key);
    read(*n, prefix_ + key, v);
  }

 private:
  template <typename V>
  static void read(const toml::node& n, const std::string& path, V& out) {
    if constexpr (std::is_same_v<V, bool>) {
      auto v = n.value_exact<bool>();
      if (!v) throw ConfigError("config key '" + path + "' expects a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<V, std::string>) {
      auto v = n.value_exact<std::string>();
      if (!v) throw ConfigError("config key '" + path + "' expects a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!n.is_number()) throw ConfigError("config key '" + path + "' expects a number");
      out = static_cast<V>(*n.value<double>());
    } else if constexpr (std::is_integral_v<V>) {
      auto v = n.value_exact<std::int64_t>();
      if (!v) throw ConfigError("config key '" + path + "' expects an integer");
      if (*v < static_cast<std::int64_t>(std::numeric_limits<V>::min()) ||
          (*v > 0 && static_cast<std::uint64_t>(*v) > static_cast<std::uint64_t>(std::numeric_limits<V>::max())))
        throw ConfigError("config key '" + path + "' is out of range");
      out = static_cast<V>(*v);
    } else {
      const auto* arr = n.as_array();
      if (!arr) throw ConfigError("config key '" + path + "' expects an array");
      V items;
      for (std::size_t i = 0; i < arr->size(); ++i) {
        typename V::value_type x{};
        read((*arr)[i], path + "[" + std::to_string(i) + "]", x);
        items.push_back(x);
      }
      out = std::move(items);
    }
  }

  template <typename V>
  static auto to_toml(const V& v) {
    if constexpr (std::is_same_v<V, bool> || std::is_same_v<V, std::string>) {
      return v;
    } else if constexpr (std::is_floating_point_v<V>) {
      return static_cast<double>(v);
    } else {
      return static_cast<std::int64_t>(v);
    }
  }

  template <typename V>
  void write(const std::string& key, const V& v) {
    if constexpr (requires { typename V::value_type; } && !std::is_same_v<V, std::string>) {
      toml::array arr;
      for (const auto& x : v) arr.push_back(to_toml(x));
      table_->insert_or_assign(key, std::move(arr));
    } else {
      table_->insert_or_assign(key, to_toml(v));
    }
  }

  toml::table* table_;
  Dir dir_;
  std::set<std::string>* seen_;
  std::string prefix_;
};

inline void visit(Archive& a, RunConfig& c) {
  auto d = a.section("data");
  d.field("dataset", c.dataset);
  d.field("split", c.split_file);

  auto s = a.section("synth");
  s.field("seed", c.synth.seed);
  s.field("grid_size", c.synth.grid_size);
  s.field("max_instances", c.synth.max_instances);
  s.field("q", c.synth.corruption);
  s.field("classes", c.synth.classes);
  s.field("n_train", c.n_train);
  s.field("n_val", c.n_val);
  s.field("n_test", c.n_test);

  auto sp = a.section("split");
  sp.field("ratio", c.split.accurate_ratio);
  sp.field("seed", c.split.seed);
  sp.field("stratify_by_category", c.split.stratify_by_category);

  auto m = a.section("model");
  m.field("seq_len", c.train.net.seq_len);
  m.field("token_dim", c.train.net.text.dim);
  m.field("ref_dim", c.train.net.text.out_dim);
  m.field("conv1", c.train.net.seg.conv1);
  m.field("conv2", c.train.net.seg.conv2);
  m.field("fused", c.train.net.seg.fused);
  m.field("up1", c.train.net.seg.up1);
  m.field("prompts", c.train.prompts);
  m.field("prompt_sigma", c.train.prompt_sigma);

  auto l = a.section("loss");
  l.field("lambda", c.train.lambda);

  auto t = a.section("train");
  t.field("seed", c.train.seed);
  t.field("mode", c.mode);
  auto t1 = t.section("stage1");
  t1.field("epochs", c.train.stage1.epochs);
  t1.field("lr", c.train.stage1.lr);
  t1.field("weight_decay", c.train.stage1.weight_decay);
  t1.field("poly_power", c.train.stage1.poly_power);
  t1.field("batch", c.train.stage1.batch);
  auto t2 = t.section("stage2");
  t2.field("epochs", c.train.stage2.epochs);
  t2.field("aux_lr", c.train.stage2.aux_lr);
  t2.field("prompt_lr", c.train.stage2.prompt_lr);
  t2.field("inner_steps", c.train.stage2.inner_steps);
  t2.field("batch", c.train.stage2.batch);
  auto t3 = t.section("stage3");
  t3.field("epochs", c.train.stage3.epochs);
  t3.field("lr", c.train.stage3.lr);
  t3.field("weight_decay", c.train.stage3.weight_decay);
  t3.field("poly_power", c.train.stage3.poly_power);
  t3.field("batch", c.train.stage3.batch);
  t3.field("prompt_lr", c.train.stage3.prompt_lr);
  t3.field("inner_steps", c.train.stage3.inner_steps);
  t3.field("update_freq", c.train.stage3.update_freq);
  t3.field("alpha_max", c.train.stage3.alpha_max);
  t3.field("ema_ramp", c.train.stage3.ema_ramp);

  auto p = a.section("probe");
  p.field("q_grid", c.probe.q_grid);
  p.field("seeds", c.probe.seeds);
  p.field("nw_grid", c.probe.nw_grid);
  p.field("nw_q", c.probe.nw_q);
  p.field("n_train", c.probe.n_train);
  p.field("n_eval", c.probe.n_eval);
  p.field("accurate_ratio", c.probe.accurate_ratio);
  p.field("grid_size", c.probe.grid_size);
  p.field("epochs", c.probe.epochs);
}

namespace detail {

inline void reject_unknown(const toml::table& t, const std::string& prefix, const std::set<std::string>& seen) {
  for (const auto& [k, v] : t) {
    const auto path = prefix + std::string(k.str());
    if (!seen.contains(path)) throw ConfigError("unknown config key '" + path + "'");
    if (const auto* sub = v.as_table()) reject_unknown(*sub, path + ".", seen);
  }
}

}  // namespace detail

/// Applies a dotted override such as "train.stage3.lr=1e-3". The value is
/// read as a TOML literal, or as a bare string when it is not one.
inline void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  std::vector<std::string> keys;
  for (std::size_t at = 0;;) {
    const auto dot = path.find('.', at);
    keys.push_back(path.substr(at, dot - at));
    if (keys.back().empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) break;
    at = dot + 1;
  }
  toml::table* t = &root;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!t->contains(keys[i])) t->insert(keys[i], toml::table{});
    t = t->get(keys[i])->as_table();
    if (!t) throw ConfigError("override '" + path + "' descends into a non-table key");
  }
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + text);
  } catch (const toml::parse_error&) {
    t->insert_or_assign(keys.back(), text);
    return;
  }
  parsed.get("v")->visit([&](auto&& node) { t->insert_or_assign(keys.back(), node); });
}

/// Parses TOML text plus overrides into a validated RunConfig over defaults `base`.
inline RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                              const std::string& origin = "config", RunConfig base = {}) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e;
    throw ConfigError(msg.str());
  }
  for (const auto& o : overrides) apply_override(root, o);
  std::set<std::string> seen;
  Archive a(&root, Archive::Dir::kRead, &seen);
  visit(a, base);
  detail::reject_unknown(root, "", seen);
  base.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), overrides, path.string());
}

/// The fully resolved config as TOML; parse_config(to_toml(c)) == c.
inline std::string to_toml(const RunConfig& c) {
  toml::table root;
  auto copy = c;
  Archive a(&root, Archive::Dir::kWrite, nullptr);
  visit(a, copy);
  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

}  // namespace wrel::cli
