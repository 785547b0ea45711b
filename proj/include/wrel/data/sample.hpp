#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "wrel/common.hpp"

namespace wrel::data {

/// H x W x 3 interleaved RGB, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;
};

/// H x W binary mask, nonzero = foreground.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::size_t foreground() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
};

enum class AnnotationKind { kAccurate, kWeak };

inline const char* to_string(AnnotationKind k) { return k == AnnotationKind::kAccurate ? "accurate" : "weak"; }
inline AnnotationKind parse_annotation_kind(const std::string& s) {
  if (s == "accurate") return AnnotationKind::kAccurate;
  if (s == "weak") return AnnotationKind::kWeak;
  throw ParseError("unknown annotation_kind '" + s + "'");
}

struct ReferringSample {
  std::string sample_id;
  Image image;
  Mask mask;
  std::string expression;
  std::string category;
  AnnotationKind annotation_kind = AnnotationKind::kAccurate;
  /// Weak expression produced for this sample at generation time (synthetic
  /// data with attribute dropping). Empty means the bare class name.
  std::string weak_expression;
  /// "train", "val" or "test".
  std::string partition = "train";
};

struct DatasetManifest {
  std::vector<ReferringSample> samples;
  std::set<std::string> categories;

  std::size_t accurate_count() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.annotation_kind == AnnotationKind::kAccurate;
    return n;
  }
  std::size_t weak_count() const { return samples.size() - accurate_count(); }

  /// Samples of one partition, categories recomputed.
  DatasetManifest partition(const std::string& name) const {
    DatasetManifest out;
    for (const auto& s : samples)
      if (s.partition == name) {
        out.samples.push_back(s);
        out.categories.insert(s.category);
      }
    return out;
  }
};

}  // namespace wrel::data
