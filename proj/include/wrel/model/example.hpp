#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wrel/data/sample.hpp"
#include "wrel/text/vocabulary.hpp"

namespace wrel::model {

/// A tokenized training/evaluation example viewing pixels owned by a manifest.
struct Example {
  std::string id;
  std::span<const float> image;
  std::span<const std::uint8_t> mask;
  text::Tokens tokens;
  bool weak = false;
};

inline Example make_example(const data::ReferringSample& s, const text::Vocabulary& vocab, int seq_len) {
  return {s.sample_id, s.image.rgb, s.mask.data, text::tokenize(s.expression, vocab, seq_len),
          s.annotation_kind == data::AnnotationKind::kWeak};
}

inline std::vector<Example> make_examples(const data::DatasetManifest& m, const text::Vocabulary& vocab,
                                          int seq_len) {
  std::vector<Example> out;
  out.reserve(m.samples.size());
  for (const auto& s : m.samples) out.push_back(make_example(s, vocab, seq_len));
  return out;
}

}  // namespace wrel::model
