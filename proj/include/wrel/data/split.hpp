#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"
#include "wrel/data/sample.hpp"
#include "wrel/text/vocabulary.hpp"

namespace wrel::data {

struct SplitSpec {
  double accurate_ratio = 0.10;
  std::uint64_t seed = 0;
  bool stratify_by_category = true;
};

/// Ratios of the benchmark: 1:9, 3:7 and 5:5 accurate to weak.
inline const std::vector<double>& benchmark_ratios() {
  static const std::vector<double> r{0.10, 0.30, 0.50};
  return r;
}

struct Split {
  double ratio = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> accurate;  // sorted ids
  std::vector<std::string> weak;      // sorted ids

  nlohmann::json to_json() const {
    return {{"ratio", ratio}, {"seed", seed}, {"accurate", accurate}, {"weak", weak}};
  }
  static Split from_json(const nlohmann::json& j) {
    Split s;
    s.ratio = j.at("ratio").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.accurate = j.at("accurate").get<std::vector<std::string>>();
    s.weak = j.at("weak").get<std::vector<std::string>>();
    return s;
  }
  friend bool operator==(const Split&, const Split&) = default;
};

/// Largest-remainder apportionment of round(ratio * N) accurate slots over
/// categories, each category receiving floor or ceil of ratio * n_c and at
/// least one slot. Returned in category order.
inline std::map<std::string, int> apportion(const std::map<std::string, int>& sizes, double ratio) {
  std::map<std::string, int> alloc;
  std::vector<std::pair<double, std::string>> remainders;
  int total = 0, assigned = 0;
  for (const auto& [cat, n] : sizes) {
    const double quota = ratio * n;
    const int lo = static_cast<int>(std::floor(quota + 1e-9));
    alloc[cat] = lo;
    assigned += lo;
    total += n;
    remainders.emplace_back(quota - lo, cat);
  }
  int remaining = static_cast<int>(std::lround(ratio * total)) - assigned;
  // Largest remainder first; ties broken by category name.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [rem, cat] : remainders) {
    if (remaining <= 0) break;
    if (rem > 1e-9 && alloc[cat] < sizes.at(cat)) {
      ++alloc[cat];
      --remaining;
    }
  }
  for (auto& [cat, k] : alloc) k = std::max(k, std::min(1, sizes.at(cat)));
  return alloc;
}

/// Category-stratified accurate/weak partition of `m`.
inline Split stratified_split(const DatasetManifest& m, const SplitSpec& spec) {
  if (!(spec.accurate_ratio > 0.0 && spec.accurate_ratio < 1.0))
    throw ConfigError("accurate ratio must lie in (0, 1)");
  std::map<std::string, std::vector<std::string>> by_cat;
  for (const auto& c : m.categories) by_cat[c];
  for (const auto& s : m.samples) by_cat[s.category].push_back(s.sample_id);
  std::map<std::string, int> sizes;
  for (auto& [cat, ids] : by_cat) {
    if (ids.empty()) throw ConfigError("category '" + cat + "' has no samples");
    std::sort(ids.begin(), ids.end());
    sizes[cat] = static_cast<int>(ids.size());
  }
  if (!spec.stratify_by_category) {
    // Single pool: category coverage is no longer guaranteed.
    sizes.clear();
    std::vector<std::string> all;
    for (auto& [cat, ids] : by_cat) all.insert(all.end(), ids.begin(), ids.end());
    std::sort(all.begin(), all.end());
    by_cat.clear();
    by_cat["*"] = all;
    sizes["*"] = static_cast<int>(all.size());
  }
  const auto alloc = apportion(sizes, spec.accurate_ratio);
  Rng rng(spec.seed);
  Split out{spec.accurate_ratio, spec.seed, {}, {}};
  for (auto& [cat, ids] : by_cat) {
    auto order = ids;
    rng.shuffle(order.begin(), order.end());
    const int k = alloc.at(cat);
    for (int i = 0; i < static_cast<int>(order.size()); ++i)
      (i < k ? out.accurate : out.weak).push_back(order[static_cast<std::size_t>(i)]);
  }
  std::sort(out.accurate.begin(), out.accurate.end());
  std::sort(out.weak.begin(), out.weak.end());
  return out;
}

/// The training view of a split: accurate samples keep their expressions,
/// weak samples carry only G(c) (their stored weak expression, or the bare
/// class name) and annotation_kind = weak.
inline DatasetManifest apply_split(const DatasetManifest& m, const Split& split) {
  const std::set<std::string> acc(split.accurate.begin(), split.accurate.end());
  const std::set<std::string> weak(split.weak.begin(), split.weak.end());
  DatasetManifest out;
  out.categories = m.categories;
  for (const auto& s : m.samples) {
    const bool is_acc = acc.contains(s.sample_id), is_weak = weak.contains(s.sample_id);
    if (!is_acc && !is_weak) continue;
    auto copy = s;
    if (is_weak) {
      copy.annotation_kind = AnnotationKind::kWeak;
      copy.expression = s.weak_expression.empty() ? text::to_lower(s.category) : s.weak_expression;
    } else {
      copy.annotation_kind = AnnotationKind::kAccurate;
    }
    out.samples.push_back(std::move(copy));
  }
  if (out.samples.size() != acc.size() + weak.size())
    throw ConfigError("split references sample ids missing from the dataset");
  return out;
}

inline void write_split(const std::filesystem::path& path, const Split& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << s.to_json().dump(2) << '\n';
}

inline Split read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Split::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace wrel::data
