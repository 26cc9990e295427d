// SPDX-License-Identifier: Apache-2.0
#pragma once

// Portable seeded randomness. Every consumer that must reproduce across
// platforms (bootstrap, QC sampling, split tie-breaking) uses these rather
// than <random> distributions, whose output is implementation-defined.
//
//   SplitMix64    - Steele, Lea & Flood (2014); used for seeding and stream derivation.
//   Xoshiro256ss  - xoshiro256** 1.0, Blackman & Vigna (2018).
//
// Bounded integers use rejection sampling on the top bits, so a given
// (seed, stream) produces the same sequence everywhere.

#include <array>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace cxr {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Xoshiro256ss {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256ss(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  // Independent stream for (seed, index), e.g. one per bootstrap replicate.
  static Xoshiro256ss for_stream(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 sm(seed);
    std::uint64_t base = sm.next();
    SplitMix64 mix(base ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
    return Xoshiro256ss(mix.next());
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    // Smallest all-ones mask covering bound - 1.
    std::uint64_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    while (true) {
      std::uint64_t x = (*this)() & mask;
      if (x < bound) return x;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};

// Fisher-Yates shuffle driven by Xoshiro256ss::below.
template <typename T>
void shuffle(std::vector<T>& v, Xoshiro256ss& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace cxr
