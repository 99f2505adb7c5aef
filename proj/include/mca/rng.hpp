#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mca {

/// SplitMix64 output function (Steele, Lea & Flood, 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from (seed, index); used to give each replicate of an
/// experiment its own master seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

/**
 * xoshiro256** (Blackman & Vigna, 2018) keyed by a (seed, stream) pair.
 *
 * The 256-bit state is filled by four SplitMix64 steps started from
 * mix64(seed ^ mix64(stream)), so every (seed, stream) pair yields its own
 * reproducible sequence. Replicate r of an experiment uses stream r; results
 * therefore do not depend on the order or thread in which replicates run.
 *
 * Floating-point draws are implemented here rather than through <random>
 * distributions so that sequences are bit-identical across standard libraries.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept {
    std::uint64_t sm = mix64(seed ^ mix64(stream));
    for (auto& s : state_) {
      s = mix64(sm);
      sm += 0x9E3779B97F4A7C15ULL;
    }
  }

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// True with probability p; p >= 1 always succeeds, p <= 0 never does.
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mca
