#pragma once

#include <cmath>
#include <cstdint>

#include "liesde/linalg.hpp"

namespace liesde {

// Counter-based stream: every output is a hash of an advancing Weyl counter
// (splitmix64), and per-path streams are derived by hashing (master seed,
// path index). Ensembles are therefore reproducible independently of the
// order in which paths are generated, and the byte stream does not depend on
// the standard library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed + 0x9E3779B97F4A7C15ULL)) {}

  Rng(std::uint64_t master_seed, std::uint64_t path_index)
      : Rng(mix(master_seed) ^ mix(path_index * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // strictly inside (0,1)
  double uniform01() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double c = std::cos(2 * M_PI * u2), s = std::sin(2 * M_PI * u2);
    spare_ = r * s;
    has_spare_ = true;
    return r * c;
  }

  double exponential(double rate) { return -std::log(uniform01()) / rate; }

  long poisson(double mean) {
    long n = 0;
    double acc = 0;
    while (true) {
      acc += exponential(1.0);
      if (acc >= mean) return n;
      ++n;
    }
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace liesde
