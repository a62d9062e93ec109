#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

namespace consultrl {

// Every run owns a single seeded root generator; components draw child seeds
// from it so results are reproducible byte-for-byte under a fixed seed.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

inline std::uint64_t child_seed(Rng& root) { return root(); }

// Unbiased draw from [0, bound) by rejection. std::uniform_int_distribution is
// implementation-defined, so draws would not be stable across toolchains.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("uniform_below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % bound;
}

inline long long uniform_int(Rng& rng, long long lo, long long hi) {
  if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<long long>(uniform_below(rng, span));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace consultrl
