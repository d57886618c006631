#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace afm {

// splitmix64 step; used to mix seeds so derived streams are decorrelated.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic seed derivation: same (base, tags) always yields the same
// stream seed, distinct tags yield unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0,
                                 std::uint64_t d = 0) {
  std::uint64_t s = base;
  std::uint64_t out = splitmix64(s);
  s ^= a;
  out ^= splitmix64(s);
  s ^= b;
  out ^= splitmix64(s);
  s ^= c;
  out ^= splitmix64(s);
  s ^= d;
  out ^= splitmix64(s);
  return out;
}

// Seeded random stream. Normal deviates use an explicit Box-Muller transform
// because std::normal_distribution's sequence is implementation-defined and
// outputs here must be bit-reproducible across standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n); n must be nonzero. Rejection sampling keeps
  // the result unbiased.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the cosine/sine pair is consumed in order.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]; keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace afm
