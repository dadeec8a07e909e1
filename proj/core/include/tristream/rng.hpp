#pragma once

#include <cstdint>
#include <random>

namespace tristream {

/// Reproducible random stream.
///
/// Uniform bits come from std::mt19937_64, whose output sequence is fixed by
/// the C++ standard, so a seed yields the same stream on every platform.
/// Uniform doubles take the top 53 bits; normal variates use the Box-Muller
/// transform (both variates of a pair are consumed). The std:: distributions
/// are avoided because their algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream; the parent advances by one draw.
  Rng split();

  /// Deterministic seed derived from a base seed and a stream index.
  static std::uint64_t derive(std::uint64_t base, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tristream
