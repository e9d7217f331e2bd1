#pragma once

#include <cstdint>
#include <random>

namespace modalfuse {

using Rng = std::mt19937_64;

// SplitMix64 finaliser applied to seed and stream index. Gives every
// (seed, index) pair an independent generator regardless of visiting order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(derive_seed(seed, index));
}

// Uniform in [0, 1) from the top 53 bits of one generator output.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace modalfuse
