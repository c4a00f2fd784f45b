#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace xmac {

// Counter-based generator: draw i is splitmix64(seed + i * odd-constant).
// The stream is a pure function of (seed, call index), so identical seeds
// and call sequences give identical outputs on every run of the same build.
// No <random> distributions are used anywhere; their output is
// implementation-defined and would break reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return mix(seed_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  // [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0,n), n >= 1.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
};

// FNV-1a, used to derive per-parameter init seeds from names.
inline uint64_t hash_name(const char* s) {
  uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 1099511628211ull;
  return h;
}

inline uint64_t hash_name(const std::string& s) { return hash_name(s.c_str()); }

}  // namespace xmac
