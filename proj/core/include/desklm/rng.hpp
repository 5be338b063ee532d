#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace desklm {

/// Seeded pseudo-random source used at every stochastic site (init,
/// masking, dropout, shuffling). Distributions are implemented here rather
/// than through <random> distributions so that streams are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Derives an independent stream for a named site, e.g. "init" or
  /// "dropout". The result depends only on the parent seed and the name.
  Rng fork(std::string_view name) const;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace desklm
