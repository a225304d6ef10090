#pragma once

/*
 * Seeded random streams.
 *
 * std::mt19937_64 is fully specified by the standard, but the library
 * distributions are not, so the draws below are written out by hand to keep
 * runs bitwise-reproducible across standard library implementations.
 */

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace tso {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent child seed from a parent seed and a path of tags.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) noexcept {
  std::uint64_t h = mix64(seed);
  ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(tags) + 0x632be59bd9b4e019ULL))), ...);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tso
