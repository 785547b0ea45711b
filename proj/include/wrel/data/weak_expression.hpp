#pragma once

#include <optional>
#include <string>

#include "wrel/common.hpp"
#include "wrel/text/vocabulary.hpp"

namespace wrel::data {

/// Attributes that make a referring expression unique within its image.
struct TargetAttributes {
  std::string color;
  std::string quadrant;
};

/// "the {color} {class} in the {quadrant}"
inline std::string accurate_expression(const std::string& category, const TargetAttributes& a) {
  return "the " + a.color + " " + text::to_lower(category) + " in the " + a.quadrant;
}

/// Weak expression G(c). Without attributes this is the lower-cased class
/// name. With attributes, each one is dropped independently with
/// probability q; exactly two uniforms are consumed (color, then quadrant),
/// so for a fixed stream the retained set shrinks monotonically as q grows.
inline std::string make_weak_expression(const std::string& category, double q, Rng& rng,
                                        const std::optional<TargetAttributes>& attrs = std::nullopt) {
  if (category.empty()) throw ConfigError("category must be nonempty");
  const std::string name = text::to_lower(category);
  if (!attrs) return name;
  const bool keep_color = !(rng.uniform() < q);
  const bool keep_quadrant = !(rng.uniform() < q);
  if (!keep_color && !keep_quadrant) return name;
  std::string out = "the ";
  if (keep_color) out += attrs->color + " ";
  out += name;
  if (keep_quadrant) out += " in the " + attrs->quadrant;
  return out;
}

}  // namespace wrel::data
