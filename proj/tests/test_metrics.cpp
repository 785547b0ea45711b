#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wrel/metrics/metrics.hpp"
#include "wrel/train/pipeline.hpp"

using namespace wrel;
using metrics::PairCounts;
using wrel::testing::ExampleStore;
using wrel::testing::random_image;
using wrel::testing::random_mask;
using wrel::testing::tokens_of;

namespace {

std::vector<std::uint8_t> grid_mask(const std::vector<int>& on, int n = 16) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(n), 0);
  for (int i : on) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

}  // namespace

TEST(Iou, Examples) {
  const auto gt = grid_mask({0, 1, 2, 5});
  EXPECT_EQ(metrics::iou(gt, gt), 1.0);
  EXPECT_EQ(metrics::iou(grid_mask({8, 9}), gt), 0.0);
  EXPECT_EQ(metrics::iou(grid_mask({}), gt), 0.0);
  // |pred ∩ gt| = 2 ({1, 2}), |pred ∪ gt| = 5.
  EXPECT_DOUBLE_EQ(metrics::iou(grid_mask({1, 2, 3}), grid_mask({0, 1, 2, 4})), 0.4);
}

TEST(Iou, Errors) {
  EXPECT_THROW(metrics::iou(grid_mask({1}, 8), grid_mask({1}, 9)), Error);
  EXPECT_THROW(metrics::iou(grid_mask({1}), grid_mask({})), Error);
}

TEST(Aggregate, Examples) {
  const std::vector<PairCounts> two{{2, 5}, {3, 5}};
  EXPECT_DOUBLE_EQ(metrics::oiou(two), 0.5);
  const std::vector<PairCounts> one{{2, 5}};
  EXPECT_EQ(metrics::oiou(one), metrics::iou(one[0]));
  EXPECT_EQ(metrics::miou(one), metrics::iou(one[0]));
  const std::vector<PairCounts> perfect{{4, 4}, {9, 9}};
  EXPECT_EQ(metrics::oiou(perfect), 1.0);
  const std::vector<PairCounts> mean{{2, 5}, {3, 5}};
  EXPECT_DOUBLE_EQ(metrics::miou(mean), 0.5);
}

TEST(Aggregate, SizeWeightingSeparatesOverallFromMean) {
  const std::vector<PairCounts> skewed{{90, 100}, {0, 10}};
  EXPECT_DOUBLE_EQ(metrics::oiou(skewed), 90.0 / 110.0);
  EXPECT_NEAR(metrics::oiou(skewed), 0.818, 1e-3);
  EXPECT_DOUBLE_EQ(metrics::miou(skewed), 0.45);
}

TEST(Precision, ThresholdsAndConvention) {
  const std::vector<PairCounts> same{{55, 100}, {11, 20}};
  EXPECT_EQ(metrics::precision_at(same, 0.5), 1.0);
  EXPECT_EQ(metrics::precision_at(same, 0.6), 0.0);
  const std::vector<PairCounts> half{{1, 2}};
  EXPECT_EQ(metrics::precision_at(half, 0.5), 1.0);
  const std::vector<PairCounts> mixed{{45, 100}, {72, 100}, {91, 100}};
  EXPECT_DOUBLE_EQ(metrics::precision_at(mixed, 0.5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::precision_at(mixed, 0.9), 1.0 / 3.0);
}

TEST(Precision, Errors) {
  const std::vector<PairCounts> one{{1, 2}};
  EXPECT_THROW(metrics::precision_at(one, 0.0), Error);
  EXPECT_THROW(metrics::precision_at(one, 1.0), Error);
  EXPECT_THROW(metrics::precision_at({}, 0.5), Error);
  EXPECT_THROW(metrics::oiou({}), Error);
  EXPECT_THROW(metrics::miou({}), Error);
}

TEST(Report, MatchesBruteForceOnRandomPairs) {
  Rng rng(2024);
  std::vector<PairCounts> pairs;
  std::int64_t sum_i = 0, sum_u = 0;
  double sum_iou = 0;
  std::array<int, 5> hits{};
  for (int k = 0; k < 500; ++k) {
    const std::size_t n = 1 + rng.below(300);
    const auto gt = random_mask(n, rng, rng.uniform());
    const auto pred = random_mask(n, rng, rng.uniform());
    std::int64_t i = 0, u = 0;
    for (std::size_t p = 0; p < n; ++p) {
      i += pred[p] && gt[p];
      u += pred[p] || gt[p];
    }
    pairs.push_back(metrics::count_pair(pred, gt));
    ASSERT_EQ(pairs.back().intersection, i);
    ASSERT_EQ(pairs.back().union_, u);
    sum_i += i;
    sum_u += u;
    const double v = static_cast<double>(i) / static_cast<double>(u);
    sum_iou += v;
    for (std::size_t t = 0; t < 5; ++t) hits[t] += v >= metrics::kThresholds[t];
  }
  const auto r = metrics::make_report(pairs, "random");
  EXPECT_EQ(r.n_samples, 500u);
  EXPECT_EQ(r.oiou, 100.0 * (static_cast<double>(sum_i) / static_cast<double>(sum_u)));
  EXPECT_EQ(r.miou, 100.0 * (sum_iou / 500.0));
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(r.precision[t], 100.0 * (hits[t] / 500.0));
    if (t > 0) {
      EXPECT_LE(r.precision[t], r.precision[t - 1]);
    }
  }
  for (double v : {r.oiou, r.miou}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(Report, JsonAndTableFollowTheColumnOrder) {
  const std::vector<PairCounts> pairs{{90, 100}, {0, 10}};
  const auto r = metrics::make_report(pairs, "val");
  const auto j = r.to_json();
  EXPECT_EQ(j["split"], "val");
  EXPECT_EQ(j["n_samples"], 2);
  EXPECT_DOUBLE_EQ(j["P@0.9"].get<double>(), 50.0);
  EXPECT_DOUBLE_EQ(j["mIoU"].get<double>(), 45.0);
  const auto header = metrics::MetricsReport::table_header();
  EXPECT_LT(header.find("P@0.5"), header.find("P@0.9"));
  EXPECT_LT(header.find("P@0.9"), header.find("oIoU"));
  EXPECT_LT(header.find("oIoU"), header.find("mIoU"));
  EXPECT_NE(r.table_row().find("81.82"), std::string::npos);
}

TEST(Evaluate, OracleAndEmptyModels) {
  Rng rng(3);
  ExampleStore store;
  store.reserve(6);
  for (int k = 0; k < 6; ++k)
    store.add("s" + std::to_string(k), random_image(8, rng), random_mask(64, rng), tokens_of({2, 3}, 4), false);
  const std::span<const model::Example> items(store.examples);
  const auto oracle = metrics::evaluate<model::Example>(
      items,
      [](const model::Example& ex) {
        std::vector<float> l(ex.mask.size());
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = ex.mask[i] ? 5.0f : -5.0f;
        return l;
      },
      "val");
  EXPECT_EQ(oracle.oiou, 100.0);
  EXPECT_EQ(oracle.miou, 100.0);
  for (double p : oracle.precision) EXPECT_EQ(p, 100.0);
  const auto empty = metrics::evaluate<model::Example>(
      items, [](const model::Example& ex) { return std::vector<float>(ex.mask.size(), -1.0f); }, "val");
  EXPECT_EQ(empty.oiou, 0.0);
  EXPECT_EQ(empty.miou, 0.0);
  for (double p : empty.precision) EXPECT_EQ(p, 0.0);
}

TEST(Evaluate, SeededModelMatchesRecomputationFromDumpedMasks) {
  Rng rng(11);
  const auto net = wrel::testing::tiny_net<float>(5, wrel::testing::tiny_dims(12, 16));
  ExampleStore store;
  store.reserve(10);
  for (int k = 0; k < 10; ++k)
    store.add("s" + std::to_string(k), random_image(16, rng), random_mask(256, rng, 0.5), tokens_of({2, 5, 3}, 8),
              false);
  const auto r = train::evaluate_network<float>(net, store.examples, "val");
  std::vector<std::vector<std::uint8_t>> dumped;
  for (const auto& ex : store.examples) {
    const auto logits = train::predict<float>(net, ex);
    std::vector<std::uint8_t> m(logits.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = logits[i] > 0.0f;
    dumped.push_back(m);
  }
  double si = 0, su = 0, mean = 0;
  for (std::size_t k = 0; k < dumped.size(); ++k) {
    double i = 0, u = 0;
    for (std::size_t p = 0; p < dumped[k].size(); ++p) {
      const bool a = dumped[k][p], b = store.examples[k].mask[p];
      i += a && b;
      u += a || b;
    }
    si += i;
    su += u;
    mean += u > 0 ? i / u : 0.0;
  }
  EXPECT_NEAR(r.oiou, 100.0 * si / su, 1e-10);
  EXPECT_NEAR(r.miou, 100.0 * mean / 10.0, 1e-10);
  EXPECT_EQ(train::evaluate_network<float>(net, store.examples, "val").to_json(), r.to_json());
}
