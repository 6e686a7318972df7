#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace mvp {

// xoshiro256** seeded through splitmix64. All draws are built from integer
// arithmetic and IEEE doubles, so identical seeds give identical streams on
// every platform (std::*_distribution would not guarantee that).
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n). Modulo bias is < 2^-50 for any n we use.
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }

  bool bernoulli(double p) { return uniform01() < p; }

  // Independent child stream; used for per-subject / per-fold generation so
  // results do not depend on draw order elsewhere.
  Rng fork(uint64_t salt) const {
    uint64_t x = state_[0] ^ (salt * 0x9e3779b97f4a7c15ULL);
    return Rng(splitmix64(x));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Fisher-Yates with explicit draws; deterministic for a given Rng state.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    if (j != i - 1) {
      auto tmp = v[i - 1];
      v[i - 1] = v[j];
      v[j] = tmp;
    }
  }
}

}  // namespace mvp
