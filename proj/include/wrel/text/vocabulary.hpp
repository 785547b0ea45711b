#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wrel/common.hpp"

namespace wrel::text {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;

inline std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline std::vector<std::string> split_words(const std::string& expression) {
  std::istringstream in(to_lower(expression));
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

/// Word-level vocabulary. PAD is always 0; the four specials occupy 0..3.
class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<unk>", "<bos>", "<eos>"} { reindex(); }

  /// Built from every word in `expressions` plus `extra` (e.g. class names),
  /// inserted in sorted order so the index is independent of input order.
  static Vocabulary build(const std::vector<std::string>& expressions,
                          const std::vector<std::string>& extra = {}) {
    std::set<std::string> words;
    for (const auto& e : expressions)
      for (auto& w : split_words(e)) words.insert(w);
    for (const auto& e : extra)
      for (auto& w : split_words(e)) words.insert(w);
    Vocabulary v;
    for (const auto& w : words) v.tokens_.push_back(w);
    v.reindex();
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  nlohmann::json to_json() const { return nlohmann::json{{"tokens", tokens_}}; }
  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.tokens_.size() < 4 || v.tokens_[0] != "<pad>")
      throw ParseError("vocabulary must start with the four special tokens");
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw ParseError("vocabulary has duplicate tokens");
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct Tokens {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;  // attention mask A
};

/// BOS w1 .. wk EOS PAD..., truncated to `length`; A[l] = 1 exactly at non-PAD slots.
inline Tokens tokenize(const std::string& expression, const Vocabulary& vocab, int length) {
  if (length < 3) throw ConfigError("sequence length must be at least 3");
  const auto words = split_words(expression);
  if (words.empty()) throw ConfigError("cannot tokenize an empty expression");
  Tokens t;
  t.ids.assign(static_cast<std::size_t>(length), kPad);
  t.mask.assign(static_cast<std::size_t>(length), 0);
  const std::size_t keep = std::min(words.size(), static_cast<std::size_t>(length - 2));
  t.ids[0] = kBos;
  for (std::size_t i = 0; i < keep; ++i) t.ids[i + 1] = vocab.id(words[i]);
  t.ids[keep + 1] = kEos;
  for (std::size_t i = 0; i < keep + 2; ++i) t.mask[i] = 1;
  return t;
}

}  // namespace wrel::text
