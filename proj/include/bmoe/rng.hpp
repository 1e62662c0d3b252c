// SPDX-License-Identifier: Apache-2.0
//
// Portable pseudo-random generator: xoshiro256** seeded through splitmix64.
// Identical seeds produce identical streams on every platform, which keeps
// synthetic fixtures and initializations reproducible byte for byte.

#pragma once

#include <cstdint>
#include <optional>

namespace bmoe {

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via the Box-Muller transform; the second variate is cached.
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace bmoe
