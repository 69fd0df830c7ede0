#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace cmm {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; the distributions below are implemented here
// rather than taken from <random> because the standard leaves those
// implementation-defined. Single owner: never share one handle across threads.
class RngHandle {
 public:
  explicit RngHandle(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal (Marsaglia polar method).
  double normal();
  // Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Index drawn from a nondecreasing cumulative distribution whose last entry
  // is the total mass.
  std::size_t from_cumulative(std::span<const double> cumulative);

  // Independent child stream, deterministic in (seed, stream).
  RngHandle derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cmm
