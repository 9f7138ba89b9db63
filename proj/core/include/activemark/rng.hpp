#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace activemark {

/// SplitMix64 finalizer. Used for seed expansion and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Deterministic child seed for (base, index), e.g. the i-th suspect of a batch.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

/// xoshiro256** seeded through SplitMix64.
///
/// All distributions are implemented here rather than through <random>
/// distributions, whose output is implementation-defined; the same seed gives
/// the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Standard normal via Box-Muller (the spare value is cached).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace activemark
