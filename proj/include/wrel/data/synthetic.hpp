#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "wrel/common.hpp"
#include "wrel/data/sample.hpp"
#include "wrel/data/weak_expression.hpp"

namespace wrel::data {

struct NamedColor {
  std::string name;
  std::uint8_t r, g, b;
};

inline std::vector<NamedColor> default_colors() {
  return {{"red", 220, 40, 40},     {"green", 40, 180, 60},    {"blue", 50, 80, 220},
          {"yellow", 230, 210, 40}, {"magenta", 200, 60, 200}, {"cyan", 40, 200, 210}};
}

struct SyntheticSceneConfig {
  int grid_size = 48;
  std::vector<std::string> classes{"circle", "square", "triangle", "cross", "bar"};
  std::vector<NamedColor> colors = default_colors();
  int max_instances = 4;
  /// Probability that each attribute is dropped from the stored weak expression.
  double corruption = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (grid_size < 16) throw ConfigError("grid_size must be >= 16");
    if (max_instances < 1) throw ConfigError("max_instances must be >= 1");
    if (!(corruption >= 0.0 && corruption <= 1.0)) throw ConfigError("corruption level q must lie in [0, 1]");
    if (classes.empty() || colors.empty()) throw ConfigError("classes and colors must be nonempty");
  }
};

inline const char* quadrant_name(bool top, bool left) {
  if (top) return left ? "top-left" : "top-right";
  return left ? "bottom-left" : "bottom-right";
}

namespace detail {

struct Shape {
  int cls = 0;
  int color = 0;
  int radius = 0;
  int cx = 0, cy = 0;
  bool vertical = false;
  std::vector<std::uint8_t> mask;
};

/// Pixel (x, y) is inside the shape; coordinates relative to pixel centers.
inline bool inside(const std::string& cls, int radius, bool vertical, double dx, double dy) {
  const double r = radius;
  if (cls == "circle") return dx * dx + dy * dy <= r * r;
  if (cls == "square") return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
  if (cls == "triangle") {
    if (dy < -r || dy > r) return false;
    const double half = 0.5 * (dy + r) * 0.9;  // apex at top
    return std::abs(dx) <= half;
  }
  if (cls == "cross")
    return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  if (cls == "bar") {
    if (vertical) std::swap(dx, dy);
    return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
  }
  // Unknown user-provided class names fall back to a disc.
  return dx * dx + dy * dy <= r * r;
}

}  // namespace detail

/// Renders one scene. Returns false if no instance is uniquely describable.
inline bool render_scene(const SyntheticSceneConfig& cfg, Rng& rng, ReferringSample& out) {
  const int g = cfg.grid_size;
  const int rmin = std::max(3, g / 12);
  const int rmax = std::max(rmin, g / 6);
  const int wanted = rng.range(1, cfg.max_instances);

  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(g) * g, 0);
  std::vector<detail::Shape> shapes;
  for (int attempt = 0; attempt < 60 && static_cast<int>(shapes.size()) < wanted; ++attempt) {
    detail::Shape s;
    s.cls = static_cast<int>(rng.below(cfg.classes.size()));
    s.color = static_cast<int>(rng.below(cfg.colors.size()));
    s.radius = rng.range(rmin, rmax);
    s.vertical = rng.uniform() < 0.5;
    s.cx = rng.range(s.radius + 1, g - s.radius - 2);
    s.cy = rng.range(s.radius + 1, g - s.radius - 2);
    s.mask.assign(static_cast<std::size_t>(g) * g, 0);
    bool clash = false;
    std::size_t area = 0;
    for (int y = 0; y < g && !clash; ++y)
      for (int x = 0; x < g; ++x) {
        if (!detail::inside(cfg.classes[static_cast<std::size_t>(s.cls)], s.radius, s.vertical, x - s.cx, y - s.cy))
          continue;
        if (occupied[static_cast<std::size_t>(y) * g + x]) {
          clash = true;
          break;
        }
        s.mask[static_cast<std::size_t>(y) * g + x] = 1;
        ++area;
      }
    if (clash || area == 0) continue;
    // one-pixel margin between instances
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        if (!s.mask[static_cast<std::size_t>(y) * g + x]) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < g && xx >= 0 && xx < g) occupied[static_cast<std::size_t>(yy) * g + xx] = 1;
          }
      }
    shapes.push_back(std::move(s));
  }
  if (shapes.empty()) return false;

  const auto quadrant = [&](const detail::Shape& s) {
    return std::string(quadrant_name(s.cy + 0.5 < g / 2.0, s.cx + 0.5 < g / 2.0));
  };
  std::map<std::tuple<int, int, std::string>, int> triple_count;
  for (const auto& s : shapes) ++triple_count[{s.color, s.cls, quadrant(s)}];
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (triple_count[{shapes[i].color, shapes[i].cls, quadrant(shapes[i])}] == 1) candidates.push_back(i);
  if (candidates.empty()) return false;
  const auto& target = shapes[candidates[rng.below(candidates.size())]];

  out.image.height = out.image.width = g;
  out.image.rgb.assign(static_cast<std::size_t>(g) * g * 3, 0.0f);
  const auto noisy = [&](int base) {
    const int v = std::clamp(base + rng.range(-12, 12), 0, 255);
    return static_cast<float>(v) / 255.0f;
  };
  for (int p = 0; p < g * g; ++p) {
    const detail::Shape* owner = nullptr;
    for (const auto& s : shapes)
      if (s.mask[static_cast<std::size_t>(p)]) owner = &s;
    int r = 90, gr = 90, b = 90;
    if (owner) {
      const auto& c = cfg.colors[static_cast<std::size_t>(owner->color)];
      r = c.r, gr = c.g, b = c.b;
    }
    out.image.rgb[static_cast<std::size_t>(p) * 3 + 0] = noisy(r);
    out.image.rgb[static_cast<std::size_t>(p) * 3 + 1] = noisy(gr);
    out.image.rgb[static_cast<std::size_t>(p) * 3 + 2] = noisy(b);
  }
  out.mask.height = out.mask.width = g;
  out.mask.data = target.mask;
  out.category = cfg.classes[static_cast<std::size_t>(target.cls)];
  const TargetAttributes attrs{cfg.colors[static_cast<std::size_t>(target.color)].name, quadrant(target)};
  out.expression = accurate_expression(out.category, attrs);
  return true;
}

inline std::string synthetic_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%06llu", static_cast<unsigned long long>(index));
  return buf;
}

/// `n` samples with global indices first_index .. first_index+n-1. Every
/// sample is a pure function of (config, index): images, masks and
/// expressions do not depend on q, only the stored weak expression does.
inline DatasetManifest generate_synthetic(const SyntheticSceneConfig& cfg, int n, std::uint64_t first_index = 0,
                                          const std::string& partition = "train") {
  cfg.validate();
  if (n < 1) throw ConfigError("number of samples must be >= 1");
  DatasetManifest m;
  for (int k = 0; k < n; ++k) {
    const std::uint64_t index = first_index + static_cast<std::uint64_t>(k);
    Rng rng = Rng::stream(cfg.seed, index);
    ReferringSample s;
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) ok = render_scene(cfg, rng, s);
    if (!ok)
      throw GenerationError("could not generate a uniquely referable scene (seed " + std::to_string(cfg.seed) +
                            ", index " + std::to_string(index) + ")");
    s.sample_id = synthetic_id(index);
    s.partition = partition;
    s.annotation_kind = AnnotationKind::kAccurate;
    // Recover the attributes from the accurate template for the weak stream.
    const auto words = text::split_words(s.expression);
    const TargetAttributes attrs{words[1], words.back()};
    // Own stream so q never perturbs the pixels.
    Rng weak_rng = Rng::stream(cfg.seed ^ 0x5eedfacecafef00dULL, index);
    s.weak_expression = make_weak_expression(s.category, cfg.corruption, weak_rng, attrs);
    m.categories.insert(s.category);
    m.samples.push_back(std::move(s));
  }
  return m;
}

/// Train / val / test partitions from one seed, with disjoint index ranges.
inline DatasetManifest generate_benchmark(const SyntheticSceneConfig& cfg, int n_train, int n_val, int n_test) {
  DatasetManifest m = generate_synthetic(cfg, n_train, 0, "train");
  const auto append = [&](int n, std::uint64_t first, const char* name) {
    if (n <= 0) return;
    auto part = generate_synthetic(cfg, n, first, name);
    for (auto& s : part.samples) m.samples.push_back(std::move(s));
    m.categories.insert(part.categories.begin(), part.categories.end());
  };
  append(n_val, static_cast<std::uint64_t>(n_train), "val");
  append(n_test, static_cast<std::uint64_t>(n_train + std::max(n_val, 0)), "test");
  return m;
}

}  // namespace wrel::data
