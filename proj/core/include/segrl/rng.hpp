#pragma once

#include <cmath>
#include <cstdint>

namespace segrl {

// PCG32 (Melissa O'Neill's pcg32_random_r) with a splitmix64-seeded state.
// Self-contained so trajectories are reproducible independent of the
// standard library's distribution implementations.
class Rng {
 public:
  Rng() : Rng(0, 0) {}
  explicit Rng(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent generator for a named sub-stream.
  Rng split(uint64_t stream_id) const;

  bool operator==(const Rng& other) const = default;

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 0;
};

// splitmix64 step; also used standalone for hashing seeds together.
uint64_t splitmix64(uint64_t& x);
uint64_t hash_combine(uint64_t a, uint64_t b);

}  // namespace segrl
