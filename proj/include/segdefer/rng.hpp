#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace segdefer {

/// Counter-based SplitMix64: output n is mix(seed + (n + 1) * golden_gamma),
/// so any position of the stream is addressable without stepping through
/// the previous ones. Test vectors (seed 0): e220a8397b1dcdaf,
/// 6e789e6aa1b965f4, 06c45d188009454f.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Value at absolute stream position `counter`.
  constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix(seed_ + (counter + 1) * kGamma);
  }

  constexpr std::uint64_t next() noexcept { return at(counter_++); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1).
  double uniform_open() noexcept { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  /// Integer in [0, n) by multiply-shift (bias below 2^-32 for n < 2^32).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Standard normal by Box-Muller (one output per two uniforms).
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Seed for an independent sub-stream, e.g. one per image.
  constexpr std::uint64_t derive(std::uint64_t stream) const noexcept {
    return mix(seed_ ^ mix(stream + kGamma));
  }

  constexpr std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace segdefer
