#pragma once

#include <cmath>
#include <string_view>

#include "mgnet/common.hpp"

namespace mgnet {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the project-wide generator
// because it is trivially portable: plain 64-bit integer arithmetic, no
// platform-dependent state, so every stream is reproducible byte-for-byte
// across compilers and machines.
//
// Constants:
//   increment  0x9E3779B97F4A7C15
//   mix mul 1  0xBF58476D1CE4E5B9
//   mix mul 2  0x94D049BB133111EB
class Rng {
public:
  explicit Rng(u64 seed) : state_(seed) {}

  u64 next_u64() {
    u64 z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps the
  // distribution exact and the stream platform-independent.
  i64 uniform_int(i64 lo, i64 hi) {
    u64 range = static_cast<u64>(hi - lo) + 1;
    u64 reject_below = (0 - range) % range;
    u64 x;
    do {
      x = next_u64();
    } while (x < reject_below);
    return lo + static_cast<i64>(x % range);
  }

  // Box-Muller, cosine branch only. Consumes exactly two raw draws per call,
  // which keeps downstream streams aligned regardless of call pattern.
  double normal(double mean, double stddev) {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

private:
  u64 state_;
};

// Derives an independent stream seed from (seed, stream). Documented recipe:
// run SplitMix64 once from `seed`, xor in the stream id, run once more.
inline u64 derive_seed(u64 seed, u64 stream) {
  Rng a(seed);
  Rng b(a.next_u64() ^ stream);
  return b.next_u64();
}

// Named sub-seed: stream id is the FNV-1a hash of the name. All project
// randomness (init, batch order, data generation, probe noise) flows from one
// master seed through these named channels.
inline u64 sub_seed(u64 seed, std::string_view name) {
  return derive_seed(seed, fnv1a64(name.data(), name.size()));
}

// Per-sample seed for order-independent dataset generation.
inline u64 sample_seed(u64 dataset_seed, u64 index) { return derive_seed(dataset_seed, index); }

}  // namespace mgnet
