#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace liquidbench {

// FNV-1a 64-bit, used for config hashes and for deriving RNG substreams
// from purpose labels.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

// Counter-based splittable generator built on the SplitMix64 finalizer
// (Steele, Lea & Flood 2014; Vigna 2015). The i-th output is a pure
// function of (key, i), so any stream can be replayed from scratch and
// substreams are derived by label or index instead of by sharing state.
//
// Stream layout used across the project: a root Rng(seed) is split once
// per purpose ("init", "shuffle", "dropout", "stress", "data", ...) and
// then by index (epoch, sample, trial). Identical (seed, path) always
// yields the identical stream, on every platform with IEEE doubles.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ kRootSalt)) {}

  Rng split(std::string_view label) const { return Rng(key_, fnv1a64(label)); }
  Rng split(std::uint64_t index) const { return Rng(key_, mix(index ^ kIndexSalt)); }

  std::uint64_t next_u64() { return mix(key_ + ++counter_ * kGamma); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with the paired draw cached.
  double normal() {
    if (spare_) {
      double z = *spare_;
      spare_.reset();
      return z;
    }
    const double two_pi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    return r * std::cos(two_pi * u2);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

private:
  Rng(std::uint64_t parent_key, std::uint64_t stream)
      : key_(mix(parent_key ^ mix(stream ^ kSplitSalt))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kRootSalt = 0x243F6A8885A308D3ull;
  static constexpr std::uint64_t kSplitSalt = 0x13198A2E03707344ull;
  static constexpr std::uint64_t kIndexSalt = 0xA4093822299F31D0ull;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

}  // namespace liquidbench
