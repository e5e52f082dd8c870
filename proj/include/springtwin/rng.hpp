#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace springtwin {

// xoshiro256** seeded through splitmix64. Uniform draws use the top 53 bits;
// normals use Box-Muller with a cached second variate. Nothing here touches
// <random> distributions, whose output is implementation-defined, so streams
// match bit-for-bit across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0. Rejection sampling, no modulo bias.
  std::size_t uniform_index(std::size_t n);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream; used to hand private generators to parallel workers.
  Rng split();

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace springtwin
