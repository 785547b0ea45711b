#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace wrel {

/// Base of every error thrown by the library. `kind()` maps onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { kConfig, kIo, kParse, kRuntime, kGeneration };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline Error ConfigError(const std::string& what) { return {Error::Kind::kConfig, what}; }
inline Error IoError(const std::string& what) { return {Error::Kind::kIo, what}; }
inline Error ParseError(const std::string& what) { return {Error::Kind::kParse, what}; }
inline Error RuntimeError(const std::string& what) { return {Error::Kind::kRuntime, what}; }
inline Error GenerationError(const std::string& what) { return {Error::Kind::kGeneration, what}; }

/// Deterministic random source. Every draw is derived from a 64-bit
/// SplitMix/xoshiro256** stream so results are identical across standard
/// library implementations (std::*_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix(x);
    has_spare_ = false;
  }

  /// Independent stream for a (seed, tag) pair, e.g. one per sample index.
  static Rng stream(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return Rng(splitmix(x));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }
  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      using std::swap;
      swap(first[i - 1], first[below(i)]);
    }
  }

  /// Serialized state, for checkpoint/resume.
  std::string save() const {
    std::string out;
    for (auto s : state_) out += std::to_string(s) + " ";
    out += has_spare_ ? "1 " : "0 ";
    out += std::to_string(std::bit_cast<std::uint64_t>(spare_));
    return out;
  }
  void load(const std::string& text);

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4]{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline void Rng::load(const std::string& text) {
  std::istringstream in(text);
  int spare_flag = 0;
  std::uint64_t spare_bits = 0;
  for (auto& s : state_) in >> s;
  in >> spare_flag >> spare_bits;
  if (!in) throw ParseError("malformed rng state");
  has_spare_ = spare_flag != 0;
  spare_ = std::bit_cast<double>(spare_bits);
}

}  // namespace wrel
