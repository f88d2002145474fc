// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace changecap {

/// Deterministic PRNG shared by every seeded operation in the library.
///
/// The stream is SplitMix64 (Steele, Lea & Flood 2014):
///
///     state += 0x9E3779B97F4A7C15
///     z = state
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     return z ^ (z >> 31)
///
/// Derived draws, fixed so other implementations can reproduce them:
///  - uniform01: (next() >> 11) * 2^-53, in [0, 1).
///  - normal: Box-Muller, cosine branch only, one normal per two uniforms:
///    u1 = 1 - uniform01(), u2 = uniform01(),
///    sqrt(-2 ln u1) * cos(2 pi u2). No spare value is cached.
///  - uniform_below(n): rejection sampling; draws r = next() until
///    r >= (2^64 - n) mod n, then returns r mod n.
///  - shuffle: Fisher-Yates, i from size-1 down to 1, j = uniform_below(i+1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept;
  double uniform01() noexcept;
  double normal() noexcept;
  std::uint64_t uniform_below(std::uint64_t n) noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Mixes two words into a new seed; used to derive independent sub-streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

}  // namespace changecap
