#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"
#include "wrel/data/split.hpp"
#include "wrel/data/synthetic.hpp"
#include "wrel/model/example.hpp"
#include "wrel/model/network.hpp"
#include "wrel/model/objective.hpp"
#include "wrel/nn/adamw.hpp"
#include "wrel/train/config.hpp"
#include "wrel/train/pipeline.hpp"

namespace wrel::theory {

struct BoundProbeConfig {
  std::vector<double> q_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<int> nw_grid{};  // extra weak-set sizes probed at q = nw_q; the full weak set is always included
  double nw_q = 0.5;
  int n_train = 300;
  int n_eval = 100;
  double accurate_ratio = 0.10;
  int grid_size = 32;
  int epochs = 20;          // shortened training for theta* and theta_a
  train::TrainConfig base;  // stage1 block drives the phi warm-up and the optimizer settings

  void validate() const {
    if (q_grid.empty() || seeds.empty()) throw ConfigError("probe grids must be nonempty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("probe seeds must be distinct");
    for (double q : q_grid)
      if (!(q >= 0 && q <= 1)) throw ConfigError("probe q values must lie in [0, 1]");
    for (int n : nw_grid)
      if (n < 1) throw ConfigError("probe N_w values must be >= 1");
    if (n_train < 2 || n_eval < 1 || epochs < 0) throw ConfigError("probe sizes must be positive");
  }
};

/// Mean of |phi(weak) - phi(accurate)|^2 over aligned pairs.
template <typename T>
double estimate_epsilon(const model::Network<T>& phi, std::span<const text::Tokens> accurate,
                        std::span<const text::Tokens> weak) {
  if (accurate.empty()) throw ConfigError("epsilon estimate needs at least one pair");
  if (accurate.size() != weak.size()) throw ConfigError("expression pairs are not aligned");
  double sum = 0;
  for (std::size_t i = 0; i < accurate.size(); ++i) {
    const auto ra = phi.encoder.encode(phi.params, phi.encoder.embed(phi.params, accurate[i]));
    const auto rw = phi.encoder.encode(phi.params, phi.encoder.embed(phi.params, weak[i]));
    double d = 0;
    for (std::size_t k = 0; k < ra.size(); ++k) {
      const double diff = static_cast<double>(rw[k]) - static_cast<double>(ra[k]);
      d += diff * diff;
    }
    sum += d;
  }
  return sum / static_cast<double>(accurate.size());
}

/// Spearman rank correlation with average ranks for ties; undefined for
/// fewer than two points or a constant series.
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0, var = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) var += (x - m) * (x - m);
  return std::sqrt(var / static_cast<double>(v.size() - 1));
}

struct FitConfig {
  int epochs = 20;
  double lr = 3e-3;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int batch = 8;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

/// AdamW on the per-batch mixed objective (1/|S|) sum_S l + lambda (1/|W|) sum_W l, no bank.
template <typename T>
void fit_mixed(model::Network<T>& net, std::span<const model::Example> examples, const FitConfig& fc) {
  if (examples.empty()) throw ConfigError("nothing to fit");
  nn::AdamW<T> opt(net.params, {.weight_decay = fc.weight_decay});
  auto grads = net.params.zeros_like();
  const auto total = fc.epochs * train::batches_per_epoch(examples.size(), fc.batch);
  std::vector<model::Example> batch;
  for (int epoch = 0; epoch < fc.epochs; ++epoch) {
    const auto order = train::epoch_order(fc.seed, train::Phase::kStage1, epoch, examples.size());
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(fc.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(fc.batch));
      batch.clear();
      for (std::size_t i = b; i < e; ++i) batch.push_back(examples[order[i]]);
      grads.fill(T(0));
      const T loss = model::mixed_loss<T>(net, batch, nullptr, fc.lambda, &grads);
      train::check_finite(static_cast<double>(loss), "probe training", epoch);
      opt.step(net.params, grads, nn::poly_lr(fc.lr, opt.steps(), total, fc.poly_power));
    }
  }
}

struct ProbeCell {
  double q = 0;
  int n_w = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double epsilon = 0;
  double risk_star = 0;  // held-out accurate-expression BCE of theta*
  double risk_a = 0;     // same for theta_a
  double gap = 0;
  double miou_star = 0;
  double miou_a = 0;
  std::string init_digest;
};

struct BoundProbeReport {
  std::vector<ProbeCell> cells;
  bool degenerate = false;  // too few cells for any correlation
  std::vector<double> q_values, mean_epsilon, mean_gap, std_gap;
  std::optional<double> spearman_gap_epsilon;
  std::vector<int> nw_values;
  std::vector<double> nw_mean_gap;
  std::optional<double> spearman_gap_inv_nw;
  double noise_band = 0;  // 2 x std of gap across seeds at q = 0
  std::optional<double> q0_mean_abs_gap;
  int missing = 0;

  bool epsilon_strictly_increasing() const {
    if (mean_epsilon.size() < 2) return false;
    for (std::size_t i = 1; i < mean_epsilon.size(); ++i)
      if (!(mean_epsilon[i] > mean_epsilon[i - 1])) return false;
    return true;
  }
  bool q0_within_noise() const { return q0_mean_abs_gap && *q0_mean_abs_gap <= noise_band; }

  nlohmann::json to_json() const {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json cj{{"q", c.q}, {"n_w", c.n_w}, {"seed", c.seed}, {"ok", c.ok}};
      if (c.ok) {
        cj["epsilon"] = c.epsilon;
        cj["risk_star"] = c.risk_star;
        cj["risk_a"] = c.risk_a;
        cj["gap"] = c.gap;
        cj["miou_star"] = c.miou_star;
        cj["miou_a"] = c.miou_a;
        cj["init_digest"] = c.init_digest;
      } else {
        cj["error"] = c.error;
      }
      j["cells"].push_back(cj);
    }
    j["by_q"] = nlohmann::json::array();
    for (std::size_t i = 0; i < q_values.size(); ++i)
      j["by_q"].push_back({{"q", q_values[i]}, {"mean_epsilon", mean_epsilon[i]}, {"mean_gap", mean_gap[i]},
                           {"std_gap", std_gap[i]}});
    j["by_nw"] = nlohmann::json::array();
    for (std::size_t i = 0; i < nw_values.size(); ++i)
      j["by_nw"].push_back({{"n_w", nw_values[i]}, {"mean_gap", nw_mean_gap[i]}});
    j["spearman_gap_epsilon"] = opt(spearman_gap_epsilon);
    j["spearman_gap_inv_nw"] = opt(spearman_gap_inv_nw);
    j["noise_band"] = noise_band;
    j["q0_mean_abs_gap"] = opt(q0_mean_abs_gap);
    j["epsilon_strictly_increasing"] = epsilon_strictly_increasing();
    j["q0_within_noise"] = q0_within_noise();
    j["degenerate"] = degenerate;
    j["missing_cells"] = missing;
    return j;
  }

  std::string csv() const {
    std::ostringstream os;
    os << "q,n_w,seed,epsilon,gap\n";
    for (const auto& c : cells) {
      if (!c.ok) continue;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%.2f,%d,%llu,%.9g,%.9g\n", c.q, c.n_w,
                    static_cast<unsigned long long>(c.seed), c.epsilon, c.gap);
      os << buf;
    }
    return os.str();
  }
};

namespace detail {

/// Everything a probe seed shares across q: pixels, split, vocabulary, phi, theta_a.
struct SeedData {
  data::DatasetManifest train;
  data::DatasetManifest eval;
  data::Split split;
  text::Vocabulary vocab;
  std::vector<std::string> weak_order;  // weak ids in the order N_w subsets are taken
};

inline SeedData make_seed_data(const BoundProbeConfig& cfg, std::uint64_t seed) {
  data::SyntheticSceneConfig sc;
  sc.grid_size = cfg.grid_size;
  sc.seed = seed;
  sc.corruption = 1.0;
  auto all = data::generate_benchmark(sc, cfg.n_train, cfg.n_eval, 0);
  SeedData d;
  d.train = all.partition("train");
  d.eval = all.partition("val");
  d.split = data::stratified_split(d.train, {cfg.accurate_ratio, seed, true});
  std::vector<std::string> exprs;
  for (const auto& s : d.train.samples) exprs.push_back(s.expression);
  d.vocab = text::Vocabulary::build(exprs, {sc.classes.begin(), sc.classes.end()});
  d.weak_order = d.split.weak;
  auto rng = Rng::stream(seed, 0x4e77);
  rng.shuffle(d.weak_order.begin(), d.weak_order.end());
  return d;
}

/// Weak expressions of the training samples at corruption level q (pixels do not depend on q).
inline std::map<std::string, std::string> weak_expressions(const BoundProbeConfig& cfg, std::uint64_t seed,
                                                           double q) {
  data::SyntheticSceneConfig sc;
  sc.grid_size = cfg.grid_size;
  sc.seed = seed;
  sc.corruption = q;
  const auto m = data::generate_synthetic(sc, cfg.n_train, 0, "train");
  std::map<std::string, std::string> out;
  for (const auto& s : m.samples) out[s.sample_id] = s.weak_expression;
  return out;
}

}  // namespace detail

/// Runs the (q x N_w x seed) grid. A failing cell is recorded and skipped;
/// `on_cell` sees every cell as it completes.
inline BoundProbeReport sweep(const BoundProbeConfig& cfg,
                              const std::function<void(const ProbeCell&)>& on_cell = {}) {
  using T = float;
  cfg.validate();
  BoundProbeReport rep;
  std::vector<double> qs = cfg.q_grid;
  std::sort(qs.begin(), qs.end());
  qs.erase(std::unique(qs.begin(), qs.end()), qs.end());

  for (const auto seed : cfg.seeds) {
    std::optional<detail::SeedData> sd;
    std::string seed_error;
    try {
      sd = detail::make_seed_data(cfg, seed);
    } catch (const std::exception& e) {
      seed_error = e.what();
    }
    const int full_nw = sd ? static_cast<int>(sd->split.weak.size()) : 0;
    // (q, N_w) cells for this seed: every q at the full weak set, plus the N_w grid at nw_q.
    std::vector<std::pair<double, int>> plan;
    for (double q : qs) plan.emplace_back(q, full_nw);
    for (int nw : cfg.nw_grid)
      if (!sd || nw < full_nw) plan.emplace_back(cfg.nw_q, nw);

    train::TrainConfig tc = cfg.base;
    tc.seed = seed;
    tc.net.seg.grid = cfg.grid_size;
    const int L = tc.net.seq_len;
    FitConfig fc{cfg.epochs, tc.stage1.lr, tc.stage1.weight_decay, tc.stage1.poly_power, tc.stage1.batch, tc.lambda,
                 seed};

    std::optional<model::Network<T>> phi, init;
    std::vector<model::Example> eval_examples;
    std::map<int, std::pair<double, double>> theta_a_cache;  // N_w -> (risk, mIoU)
    std::map<double, std::map<std::string, std::string>> weak_cache;
    if (sd) {
      try {
        tc.net.text.vocab = sd->vocab.size();
        init.emplace(tc.net);
        auto init_rng = Rng::stream(seed, 0x1417);
        init->init(init_rng);
        // phi: the stage-1 warm-up encoder on the accurate subset.
        auto acc_view = data::apply_split(sd->train, {cfg.accurate_ratio, seed, sd->split.accurate, {}});
        const auto acc = model::make_examples(acc_view, sd->vocab, L);
        auto st = train::TrainerState<T>{};
        st.seed = seed;
        st.student = *init;
        st.teacher = *init;
        train::stage1_warmup<T>(tc, st, acc);
        phi = st.student;
        eval_examples = model::make_examples(sd->eval, sd->vocab, L);
      } catch (const std::exception& e) {
        seed_error = e.what();
        sd.reset();
      }
    }

    for (const auto& [q, nw] : plan) {
      ProbeCell cell;
      cell.q = q;
      cell.n_w = nw;
      cell.seed = seed;
      try {
        if (!sd) throw RuntimeError("seed setup failed: " + seed_error);
        const std::set<std::string> used_weak(sd->weak_order.begin(), sd->weak_order.begin() + nw);
        if (!weak_cache.contains(q)) weak_cache[q] = detail::weak_expressions(cfg, seed, q);
        const auto& wexpr = weak_cache.at(q);
        std::vector<model::Example> star, all_acc;
        std::vector<text::Tokens> acc_tokens, weak_tokens;
        const std::set<std::string> acc_ids(sd->split.accurate.begin(), sd->split.accurate.end());
        for (const auto& s : sd->train.samples) {
          const bool is_acc = acc_ids.contains(s.sample_id);
          if (!is_acc && !used_weak.contains(s.sample_id)) continue;
          auto e_acc = model::make_example(s, sd->vocab, L);
          e_acc.weak = !is_acc;
          all_acc.push_back(e_acc);
          auto e_star = e_acc;
          if (!is_acc) {
            e_star.tokens = text::tokenize(wexpr.at(s.sample_id), sd->vocab, L);
            acc_tokens.push_back(e_acc.tokens);
            weak_tokens.push_back(e_star.tokens);
          }
          star.push_back(std::move(e_star));
        }
        cell.epsilon = estimate_epsilon<T>(*phi, acc_tokens, weak_tokens);
        cell.init_digest = model::param_digest(init->params);

        auto theta_star = *init;
        fit_mixed<T>(theta_star, star, fc);
        cell.risk_star = train::mean_loss<T>(theta_star, eval_examples);
        cell.miou_star = train::evaluate_network<T>(theta_star, eval_examples, "eval").miou;
        if (!theta_a_cache.contains(nw)) {
          auto theta_a = *init;
          fit_mixed<T>(theta_a, all_acc, fc);
          theta_a_cache[nw] = {train::mean_loss<T>(theta_a, eval_examples),
                               train::evaluate_network<T>(theta_a, eval_examples, "eval").miou};
        }
        cell.risk_a = theta_a_cache.at(nw).first;
        cell.miou_a = theta_a_cache.at(nw).second;
        cell.gap = cell.risk_star - cell.risk_a;
        if (!std::isfinite(cell.gap)) throw RuntimeError("non-finite risk gap");
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      if (on_cell) on_cell(cell);
      rep.cells.push_back(cell);
    }
  }

  // Aggregates over successful cells.
  for (const auto& c : rep.cells) rep.missing += !c.ok;
  std::map<std::uint64_t, int> full_nw_of_seed;
  for (const auto& c : rep.cells)
    if (c.ok) full_nw_of_seed[c.seed] = std::max(full_nw_of_seed[c.seed], c.n_w);
  const auto is_full = [&](const ProbeCell& c) { return c.ok && c.n_w == full_nw_of_seed[c.seed]; };
  for (double q : qs) {
    std::vector<double> eps, gaps;
    for (const auto& c : rep.cells)
      if (is_full(c) && c.q == q) {
        eps.push_back(c.epsilon);
        gaps.push_back(c.gap);
      }
    if (gaps.empty()) continue;
    double me = 0, mg = 0;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      me += eps[i];
      mg += gaps[i];
    }
    me /= static_cast<double>(gaps.size());
    mg /= static_cast<double>(gaps.size());
    const double sd = sample_std(gaps);
    rep.q_values.push_back(q);
    rep.mean_epsilon.push_back(me);
    rep.mean_gap.push_back(mg);
    rep.std_gap.push_back(sd);
    if (q == 0.0) {
      rep.noise_band = 2.0 * sd;
      double abs_mean = 0;
      for (double g : gaps) abs_mean += std::abs(g);
      rep.q0_mean_abs_gap = abs_mean / static_cast<double>(gaps.size());
    }
  }
  rep.spearman_gap_epsilon = spearman(rep.mean_gap, rep.mean_epsilon);

  // N_w trend at q = nw_q (full weak sets included).
  std::map<int, std::vector<double>> by_nw;
  for (const auto& c : rep.cells)
    if (c.ok && c.q == cfg.nw_q) by_nw[c.n_w].push_back(c.gap);
  std::vector<double> inv_nw;
  for (const auto& [nw, gaps] : by_nw) {
    double mg = 0;
    for (double g : gaps) mg += g;
    rep.nw_values.push_back(nw);
    rep.nw_mean_gap.push_back(mg / static_cast<double>(gaps.size()));
    inv_nw.push_back(1.0 / nw);
  }
  rep.spearman_gap_inv_nw = spearman(rep.nw_mean_gap, inv_nw);
  rep.degenerate = rep.cells.size() <= 1 || (!rep.spearman_gap_epsilon && !rep.spearman_gap_inv_nw);
  return rep;
}

}  // namespace wrel::theory
