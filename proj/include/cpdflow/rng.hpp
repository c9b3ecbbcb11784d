#pragma once

#include <cstdint>
#include <random>

namespace cpdflow {

/// Seedable random stream.
///
/// The engine is std::mt19937_64 (fully specified by the standard, so the raw
/// 64-bit stream is identical on every conforming implementation). The
/// floating-point transforms are written out here instead of using
/// std::*_distribution, whose algorithms are implementation-defined:
///   uniform()  : top 53 bits of one engine output scaled by 2^-53, in [0, 1)
///   normal()   : Box-Muller on two uniforms, both outputs used in turn
///   index(n)   : rejection sampling on the raw 64-bit output
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t index(std::uint64_t n);

  /// Child stream whose seed is derived from this stream's seed and `stream`.
  /// Does not advance this generator.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace cpdflow
