#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wrel/common.hpp"

namespace wrel::nn {

/// Named collection of flat parameter tensors. Order of insertion is the
/// canonical order used by optimizers, checkpoints and digests.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> values;
  };

  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    entries_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.values.size();
    return n;
  }

  std::span<T> operator[](std::size_t i) { return entries_[i].values; }
  std::span<const T> operator[](std::size_t i) const { return entries_[i].values; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    throw ConfigError("unknown parameter '" + name + "'");
  }
  std::span<const T> get(const std::string& name) const { return (*this)[index_of(name)]; }
  void set(const std::string& name, std::span<const T> values) {
    auto& dst = entries_[index_of(name)].values;
    if (dst.size() != values.size())
      throw ConfigError("size mismatch setting parameter '" + name + "'");
    std::copy(values.begin(), values.end(), dst.begin());
  }

  /// A zero-filled set with identical names and shapes (gradient buffers, moments).
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, e.shape);
    return out;
  }
  void fill(T v) {
    for (auto& e : entries_) std::fill(e.values.begin(), e.values.end(), v);
  }

  bool same_layout(const ParamSet& other) const {
    if (other.entries_.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].values.size() != other.entries_[i].values.size())
        return false;
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (a.entries_[i].values != b.entries_[i].values) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
void init_normal(std::span<T> values, double stddev, Rng& rng) {
  for (auto& v : values) v = static_cast<T>(stddev * rng.normal());
}

}  // namespace wrel::nn
