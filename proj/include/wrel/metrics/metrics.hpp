#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"

namespace wrel::metrics {

inline constexpr std::array<double, 5> kThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

/// Integer intersection and union pixel counts of one prediction.
struct PairCounts {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
};

inline PairCounts count_pair(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ConfigError("prediction and ground truth differ in shape");
  PairCounts c;
  std::int64_t gt_fg = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.intersection += p && g;
    c.union_ += p || g;
    gt_fg += g;
  }
  if (gt_fg == 0) throw ConfigError("ground-truth mask is empty");
  return c;
}

inline double iou(const PairCounts& c) {
  return c.union_ == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  return iou(count_pair(pred, gt));
}

/// Cumulative intersection over cumulative union.
inline double oiou(std::span<const PairCounts> pairs) {
  if (pairs.empty()) throw ConfigError("oIoU of an empty set");
  std::int64_t i = 0, u = 0;
  for (const auto& c : pairs) {
    i += c.intersection;
    u += c.union_;
  }
  return u == 0 ? 0.0 : static_cast<double>(i) / static_cast<double>(u);
}

inline double miou(std::span<const PairCounts> pairs) {
  if (pairs.empty()) throw ConfigError("mIoU of an empty set");
  double s = 0;
  for (const auto& c : pairs) s += iou(c);
  return s / static_cast<double>(pairs.size());
}

/// Fraction of pairs with IoU >= x.
inline double precision_at(std::span<const PairCounts> pairs, double x) {
  if (!(x > 0.0 && x < 1.0)) throw ConfigError("P@X threshold must lie in (0, 1)");
  if (pairs.empty()) throw ConfigError("P@X of an empty set");
  std::size_t hits = 0;
  for (const auto& c : pairs) hits += iou(c) >= x;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

/// Percentages, columns in the order P@0.5 .. P@0.9, oIoU, mIoU.
struct MetricsReport {
  std::string split;
  std::size_t n_samples = 0;
  std::array<double, 5> precision{};
  double oiou = 0;
  double miou = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["split"] = split;
    j["n_samples"] = n_samples;
    for (std::size_t k = 0; k < kThresholds.size(); ++k) j[column(k)] = precision[k];
    j["oIoU"] = oiou;
    j["mIoU"] = miou;
    return j;
  }

  static std::string column(std::size_t k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "P@%.1f", kThresholds[k]);
    return buf;
  }

  static std::string table_header(const std::string& lead = "") {
    std::ostringstream os;
    if (!lead.empty()) os << pad(lead, 16);
    for (std::size_t k = 0; k < kThresholds.size(); ++k) os << pad(column(k), 8);
    os << pad("oIoU", 8) << pad("mIoU", 8);
    return os.str();
  }
  std::string table_row(const std::string& lead = "") const {
    std::ostringstream os;
    if (!lead.empty()) os << pad(lead, 16);
    for (double v : precision) os << pad(fixed2(v), 8);
    os << pad(fixed2(oiou), 8) << pad(fixed2(miou), 8);
    return os.str();
  }
  std::string table() const { return table_header() + "\n" + table_row() + "\n"; }

  static std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }

 private:
  static std::string pad(const std::string& s, std::size_t w) {
    return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' ');
  }
};

inline MetricsReport make_report(std::span<const PairCounts> pairs, std::string split) {
  MetricsReport r;
  r.split = std::move(split);
  r.n_samples = pairs.size();
  for (std::size_t k = 0; k < kThresholds.size(); ++k) r.precision[k] = 100.0 * precision_at(pairs, kThresholds[k]);
  r.oiou = 100.0 * oiou(pairs);
  r.miou = 100.0 * miou(pairs);
  return r;
}

/// Binarizes logits (> threshold) and counts against the ground truth.
template <typename T>
PairCounts score_logits(std::span<const T> logits, std::span<const std::uint8_t> gt, double threshold = 0.0) {
  std::vector<std::uint8_t> pred(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) pred[i] = static_cast<double>(logits[i]) > threshold;
  return count_pair(pred, gt);
}

/// Runs `predict` (item -> logits) over `items` in order and reports.
template <typename Item, typename Predict>
MetricsReport evaluate(std::span<const Item> items, Predict&& predict, const std::string& split,
                       double threshold = 0.0) {
  std::vector<PairCounts> pairs;
  pairs.reserve(items.size());
  for (const auto& it : items) {
    const auto logits = predict(it);
    pairs.push_back(score_logits<typename decltype(logits)::value_type>(logits, it.mask, threshold));
  }
  return make_report(pairs, split);
}

}  // namespace wrel::metrics
