#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace resgen {

using Rng = std::mt19937_64;

// Independent stream keyed by (root seed, keys...). Used so that every
// training step, worker and depth owns a stream that does not depend on how
// much randomness earlier stages consumed.
Rng derive_rng(std::uint64_t root, std::initializer_list<std::uint64_t> keys);

// Uniform on [0, 1) with 53 bits of resolution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform on (0, 1); never returns 0.
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller, one draw per call so streams stay stateless apart from the engine.
double standard_normal(Rng& rng);

double standard_gumbel(Rng& rng);

// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

}  // namespace resgen
