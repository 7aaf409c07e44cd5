#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace stgdat {

// Deterministic random source. All stochastic code in the library draws from
// an explicitly passed Rng; nothing touches global random state. The variate
// transforms (uniform, Box-Muller normal) are implemented here rather than
// with std::*_distribution so that byte-identical streams are produced across
// standard libraries and runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi] inclusive (rejection-free modulo is fine for
  // the small ranges used here; bias is < 2^-32 for ranges under 2^32).
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Standard normal via Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream; depends only on the parent seed and the label,
  // not on how much of the parent stream has been consumed.
  Rng derive(std::uint64_t stream) const {
    return Rng(splitmix(seed_ ^ splitmix(stream + 0x9E3779B97F4A7C15ull)));
  }

  Rng derive(std::string_view label) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return derive(h);
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stgdat
