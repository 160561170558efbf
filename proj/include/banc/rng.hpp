//
//  rng.hpp — deterministic random number generation.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cmath>
#include <cstdint>

namespace banc {

// splitmix64 core. Unlike std::normal_distribution, every draw here is
// specified bit-for-bit, so seeded runs reproduce across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; one value per call, cache discarded
  // to keep the stream position independent of call parity.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

// Derives an independent stream from (seed, stream labels). Used for
// stateless reproducibility: rng_for(seed, step) at any point of a run
// yields the same stream whether or not the run was resumed.
inline Rng rng_for(uint64_t seed, uint64_t a, uint64_t b = 0) {
  Rng mix(seed ^ (0x9e3779b97f4a7c15ULL + a * 0xd1342543de82ef95ULL + b * 0xaf251af3b0f025b5ULL));
  mix.next_u64();
  return Rng(mix.next_u64());
}

}  // namespace banc
