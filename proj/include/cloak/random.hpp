#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace cloak {

// Deterministic random stream with a fixed draw discipline: every normal()
// consumes exactly two uniforms (no Box-Muller caching), so code that promises
// "consumes exactly N draws" can be checked by counting. All values are
// reproducible bit-for-bit on one platform given the same seed.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; always two uniform draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). n must be >= 1. Consumes one draw.
  int uniform_int(int n) { return static_cast<int>(uniform() * n); }

  // Bernoulli(p). Degenerate probabilities consume no draws, so a transform
  // spec with p == 0 or p == 1 leaves the stream untouched.
  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  // Independent child stream; consumes one draw from the parent.
  RandomStream substream(std::uint64_t id) {
    return RandomStream(mix(raw() ^ (0x9e3779b97f4a7c15ULL * (id + 1))));
  }

  // FNV-1a digest of the serialized engine state, for run manifests.
  std::string state_digest() const {
    std::ostringstream os;
    os << gen_;
    const std::string s = os.str();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace cloak
