#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <vector>

namespace fredholm {

// splitmix64 (Steele/Lea/Flood, public domain), used only to expand a
// (seed, stream) pair into generator state.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

// xoshiro256++ (Blackman/Vigna, public domain).  Chosen over the standard
// library engines because the byte-for-byte output contract has to hold
// across library versions, and <random> distributions do not promise that.
class Xoshiro256pp {
 public:
  Xoshiro256pp(std::uint64_t seed, std::uint64_t stream) {
    SplitMix64 sm{seed ^ (0x632be59bd9b4e019ULL * (stream + 1))};
    bool all_zero = true;
    for (auto& word : s_) {
      word = sm.next();
      all_zero = all_zero && word == 0;
    }
    if (all_zero) s_[0] = 1;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform draw in (0, 1], safe to pass through log().
  double next_unit() {
    return (double(next() >> 11) + 1.0) * 0x1p-53;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

/// One stream of i.i.d. standard normals, reproducible from (seed, stream).
/// Streams with distinct indices are independent, which is what makes
/// path-parallel simulation order-insensitive: path p always consumes stream p
/// no matter which thread runs it.
struct NoiseVector {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<double> values;
};

inline NoiseVector gaussian_noise(std::size_t count, std::uint64_t seed,
                                  std::uint64_t stream) {
  NoiseVector out;
  out.seed = seed;
  out.stream = stream;
  out.values.resize(count);
  Xoshiro256pp rng(seed, stream);
  std::size_t i = 0;
  while (i < count) {
    // Box-Muller; spelled out rather than taken from <random> for the same
    // reproducibility reason as the generator itself.
    const double u1 = rng.next_unit();
    const double u2 = rng.next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    out.values[i++] = r * std::cos(a);
    if (i < count) out.values[i++] = r * std::sin(a);
  }
  return out;
}

}  // namespace fredholm
