#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace modbot::util {

// Combines an arbitrary list of integers into one seed. Used for counter-based
// seeding: every stochastic site derives its generator from
// mix({experiment_seed, <site tags...>}) so results are independent of
// evaluation order and thread scheduling.
inline uint64_t mix(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (uint64_t p : parts) {
    for (int i = 0; i < 8; ++i) {
      h ^= (p >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  // splitmix64 finalizer for avalanche
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

// Small deterministic generator (splitmix64 core). Identical sequences on
// every platform; no dependence on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The spare value is cached, so a single
  // Rng instance yields a fixed sequence regardless of call pattern mixing.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace modbot::util
