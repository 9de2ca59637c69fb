#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nodal {

// Base class for all domain errors thrown by the library. Every subclass names
// the offending record (bus id, line endpoints, row index, ...) in its message.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Execution mode for the data-parallel kernels. Parallel uses OpenMP with a
// static schedule over disjoint outputs, so Serial and Parallel results are
// bit-identical; Serial is the reference path the tests compare against.
enum class Exec { Serial, Parallel };

// Deterministic splitmix64 stream. Used everywhere randomness is needed
// (synthetic profiles, price initialization, test generators) so results are
// reproducible across platforms and standard libraries: std::*_distribution is
// implementation-defined, so we never use it.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

// Derive an independent stream for sub-entity `k` of a seeded generator.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t k) {
  SplitMix64 mix(seed ^ (0x51ed2701a3b4c5d6ull + k * 0x9e3779b97f4a7c15ull));
  mix.next();
  return mix.next();
}

}  // namespace nodal
