#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"
#include "wrel/data/png_io.hpp"
#include "wrel/data/sample.hpp"
#include "wrel/text/vocabulary.hpp"

namespace wrel::data {

struct Violation {
  std::string sample_id;
  std::string rule;
  friend bool operator==(const Violation&, const Violation&) = default;
};

inline constexpr const char* kEmptyMask = "empty ground-truth mask";
inline constexpr const char* kDuplicateId = "duplicate sample_id";
inline constexpr const char* kShapeMismatch = "image and mask shapes differ";
inline constexpr const char* kUnknownCategory = "category not in manifest categories";
inline constexpr const char* kWeakMismatch = "weak expression does not match G(category)";
inline constexpr const char* kPixelRange = "image values outside [0, 1]";
inline constexpr const char* kEmptyExpression = "empty expression";

/// One violation per breached rule per sample; empty iff the manifest is valid.
inline std::vector<Violation> validate_manifest(const DatasetManifest& m) {
  std::vector<Violation> out;
  std::set<std::string> seen;
  for (const auto& s : m.samples) {
    if (!seen.insert(s.sample_id).second) out.push_back({s.sample_id, kDuplicateId});
    if (s.image.height != s.mask.height || s.image.width != s.mask.width ||
        s.image.rgb.size() != static_cast<std::size_t>(s.image.height) * s.image.width * 3 ||
        s.mask.data.size() != static_cast<std::size_t>(s.mask.height) * s.mask.width)
      out.push_back({s.sample_id, kShapeMismatch});
    if (s.mask.foreground() == 0) out.push_back({s.sample_id, kEmptyMask});
    for (float v : s.image.rgb)
      if (!(v >= 0.0f && v <= 1.0f)) {
        out.push_back({s.sample_id, kPixelRange});
        break;
      }
    if (!m.categories.contains(s.category)) out.push_back({s.sample_id, kUnknownCategory});
    if (text::split_words(s.expression).empty()) out.push_back({s.sample_id, kEmptyExpression});
    if (s.annotation_kind == AnnotationKind::kWeak) {
      const std::string expected = s.weak_expression.empty() ? text::to_lower(s.category) : s.weak_expression;
      if (s.expression != expected) out.push_back({s.sample_id, kWeakMismatch});
    }
  }
  return out;
}

inline nlohmann::json sample_record(const ReferringSample& s) {
  nlohmann::json j{{"sample_id", s.sample_id},
                   {"image_path", "images/" + s.sample_id + ".png"},
                   {"mask_path", "masks/" + s.sample_id + ".png"},
                   {"expression", s.expression},
                   {"category", s.category},
                   {"annotation_kind", to_string(s.annotation_kind)}};
  if (!s.weak_expression.empty()) j["weak_expression"] = s.weak_expression;
  if (s.partition != "train") j["partition"] = s.partition;
  return j;
}

/// Writes images/, masks/ and manifest.jsonl under `dir`.
inline void write_dataset(const std::filesystem::path& dir, const DatasetManifest& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream out(dir / "manifest.jsonl", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& s : m.samples) {
    write_image((dir / "images" / (s.sample_id + ".png")).string(), s.image);
    write_mask((dir / "masks" / (s.sample_id + ".png")).string(), s.mask);
    out << sample_record(s).dump() << '\n';
  }
}

/// Parses manifest.jsonl and loads the referenced PNGs. Syntax errors are
/// reported with their line number; semantic problems are left to
/// validate_manifest.
inline DatasetManifest read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  DatasetManifest m;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + e.what());
    }
    ReferringSample s;
    try {
      s.sample_id = j.at("sample_id").get<std::string>();
      s.expression = j.at("expression").get<std::string>();
      s.category = j.at("category").get<std::string>();
      s.annotation_kind = parse_annotation_kind(j.at("annotation_kind").get<std::string>());
      s.weak_expression = j.value("weak_expression", std::string());
      s.partition = j.value("partition", std::string("train"));
      const auto image_path = j.at("image_path").get<std::string>();
      const auto mask_path = j.at("mask_path").get<std::string>();
      s.image = read_image((dir / image_path).string());
      s.mask = read_mask((dir / mask_path).string());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const Error& e) {
      if (e.kind() == Error::Kind::kIo) throw;
      throw ParseError(where + e.what());
    }
    m.categories.insert(s.category);
    m.samples.push_back(std::move(s));
  }
  return m;
}

}  // namespace wrel::data
