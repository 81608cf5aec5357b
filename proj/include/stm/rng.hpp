#pragma once

// Deterministic random number utilities.  All randomness in the library flows
// through explicit 64-bit seeds; derived streams are obtained by hashing a
// base seed with integer tags.  std::mt19937_64 is bit-exact across
// platforms, but the std <random> distributions are not, so the conversions
// to uniform/normal/bounded-integer variates are implemented here.

#include <cmath>
#include <cstdint>
#include <random>

namespace stm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive an independent seed stream from (base, tag).  Used to give each
// purpose (sampling order, restart index, trial index, ...) its own stream so
// that results do not depend on evaluation order or thread count.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (0x632be59bd9b4e019ULL + tag * 0x9e3779b97f4a7c15ULL);
  splitmix64(s);
  std::uint64_t r = splitmix64(s);
  return r;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag1, std::uint64_t tag2) {
  return derive_seed(derive_seed(base, tag1), tag2);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Unbiased integer in [0, bound) via rejection sampling.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % bound;
  }

  // Standard normal via Box-Muller (no cached second variate: keeps the
  // stream position a pure function of the call count).
  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace stm
