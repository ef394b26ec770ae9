#pragma once

#include <cstdint>
#include <vector>

namespace streamnet {

/// SplitMix64 pseudo-random generator (Steele, Lea & Flood; the exact
/// variant published by Vigna at https://prng.di.unimi.it/splitmix64.c).
///
/// Every randomized artifact in this project - corruption masks, shuffles,
/// weight initialization, synthetic data - is drawn from this generator so
/// that a run is reproducible bit-for-bit from its seeds alone, and so that
/// another implementation of the same file formats can regenerate identical
/// masks. Standard-library distributions are deliberately avoided: their
/// outputs are not pinned across toolchains.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  /// Next 64 uniformly distributed bits.
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), from the top 53 bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Uniform integer in [0, bound). bound must be nonzero. Plain modulo
  /// reduction: trivially reproducible in any language, and the bias is
  /// irrelevant at the bounds used here (all far below 2^32).
  std::uint64_t next_below(std::uint64_t bound) {
    return next_u64() % bound;
  }

 private:
  std::uint64_t state_;
};

/// Deterministically derives an independent child seed from a base seed and a
/// salt. Equivalent to jumping a SplitMix64 stream ahead by `salt + 1` steps
/// and taking that output, so distinct salts give decorrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  SplitMix64 mix(base + salt * 0x9E3779B97F4A7C15ull);
  return mix.next_u64();
}

/// First `count` entries of a seeded Fisher-Yates shuffle of {0, ..., n-1}.
/// With count == n this is a full random permutation.
inline std::vector<std::size_t> partial_shuffle(std::size_t n, std::size_t count,
                                                SplitMix64& rng) {
  std::vector<std::size_t> indices(n);
  for (std::size_t i = 0; i < n; ++i) indices[i] = i;
  if (count > n) count = n;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(count);
  return indices;
}

}  // namespace streamnet
