#ifndef NEONAV_RNG_HPP
#define NEONAV_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace neonav {

/// SplitMix64 finalizer. Used both as a sequential generator and as the
/// mixing function of CounterRng.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Plain sequential SplitMix64. Scene generation uses this so the sampling
/// procedure can be replayed outside C++ with a few lines of code.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

/// Counter-based generator: draw n of stream s under seed is a pure function
/// of (seed, s, n). Splitting never consumes draws from the parent, so the
/// sequence seen by one consumer cannot depend on scheduling of another.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : key_(splitmix64_mix(seed ^ 0x6A09E667F3BCC909ULL) ^
             splitmix64_mix(stream + 0x3C6EF372FE94F82BULL)) {}

  constexpr std::uint64_t next() noexcept {
    return splitmix64_mix(key_ + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Multiply-shift; bias is below 2^-40 for the
  /// ranges used here.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child stream.
  [[nodiscard]] constexpr CounterRng split(std::uint64_t stream) const noexcept {
    CounterRng child;
    child.key_ = splitmix64_mix(key_ ^ splitmix64_mix(stream + 0xA54FF53A5F1D36F1ULL));
    return child;
  }

  [[nodiscard]] constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace neonav

#endif  // NEONAV_RNG_HPP
