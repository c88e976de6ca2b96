#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace attndiff {

// SplitMix64: a counter-based 64-bit generator. The state advances by a
// fixed odd increment and each output is a bijective mix of the counter,
// so streams are reproducible across platforms and compilers.
// Double conversion uses the top 53 bits; normals use a 128-layer
// ziggurat (one 64-bit draw per sample outside the rare edge cases).
class SplitMix64 {
 public:
  static constexpr std::uint64_t kIncrement = 0x9E3779B97F4A7C15ULL;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += kIncrement;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % bound;
  }

  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

namespace detail {

// Layer edges x[0..128] and ratios x[i+1]/x[i] for the normal ziggurat
// (Marsaglia & Tsang layout with Doornik's tail handling).
struct ZigguratTables {
  static constexpr int kLayers = 128;
  static constexpr double kR = 3.442619855899;
  static constexpr double kArea = 9.91256303526217e-3;
  double x[kLayers + 1];
  double ratio[kLayers];

  ZigguratTables() {
    const double f = std::exp(-0.5 * kR * kR);
    x[0] = kArea / f;
    x[1] = kR;
    for (int i = 2; i < kLayers; ++i) {
      x[i] = std::sqrt(-2.0 * std::log(kArea / x[i - 1] + std::exp(-0.5 * x[i - 1] * x[i - 1])));
    }
    x[kLayers] = 0.0;
    for (int i = 0; i < kLayers; ++i) ratio[i] = x[i + 1] / x[i];
  }
};

inline const ZigguratTables& ziggurat_tables() {
  static const ZigguratTables tables;
  return tables;
}

}  // namespace detail

inline double SplitMix64::normal() {
  const auto& z = detail::ziggurat_tables();
  for (;;) {
    const std::uint64_t bits = next();
    const int layer = static_cast<int>(bits & 127U);
    const double u = 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
    if (std::abs(u) < z.ratio[layer]) return u * z.x[layer];
    if (layer == 0) {
      // Tail beyond R.
      double x, y;
      do {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        while (u2 <= 0.0) u2 = uniform();
        x = std::log(u1) / z.kR;
        y = std::log(u2);
      } while (-2.0 * y < x * x);
      return u < 0.0 ? x - z.kR : z.kR - x;
    }
    const double ux = u * z.x[layer];
    const double f0 = std::exp(-0.5 * (z.x[layer] * z.x[layer] - ux * ux));
    const double f1 = std::exp(-0.5 * (z.x[layer + 1] * z.x[layer + 1] - ux * ux));
    if (f1 + uniform() * (f0 - f1) < 1.0) return ux;
  }
}

// 64-bit FNV-1a; stable across platforms, used for tags and content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t hash = 0xCBF29CE484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

// Derive an independent stream seed from a parent seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return SplitMix64::mix(seed ^ SplitMix64::mix(tag + SplitMix64::kIncrement));
}

}  // namespace attndiff
