#pragma once

#include <cstdint>
#include <limits>

namespace fairgrad {

// Counter-based generator: the n-th output is a pure function of (seed, n), so a
// copy of the generator replays the same stream. Satisfies
// UniformRandomBitGenerator and can drive <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() { return mix(key_ + kGolden * ++counter_); }

  /// Independent generator for a child task (sweep member, sub-run, ...).
  constexpr CounterRng split(std::uint64_t stream) const {
    CounterRng child;
    child.key_ = mix(key_ ^ mix(stream * kGolden + 0x9E3779B97F4A7C15ULL));
    return child;
  }

  constexpr std::uint64_t counter() const { return counter_; }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  // splitmix64 finalizer
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace fairgrad
