#pragma once

#include <cstdint>
#include <random>

namespace afft {

using Rng = std::mt19937_64;

/// Unbiased draw from [0, n) by rejection. Portable across standard libraries,
/// unlike std::uniform_int_distribution.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace afft
