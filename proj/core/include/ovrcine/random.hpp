#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace ovrcine {

// Deterministic generator whose derived distributions do not depend on the
// standard library implementation (std::*_distribution are unspecified).
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_(seed)
  {
  }

  std::uint64_t bits() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  // Standard normal via Box-Muller; caches the second deviate.
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) { u1 = uniform(); }
    double const u2 = uniform();
    double const r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Mixes several integers into one seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0)
{
  std::uint64_t h = a * 0x9e3779b97f4a7c15ULL;
  h ^= b + 0x7f4a7c159e3779b9ULL + (h << 6) + (h >> 2);
  h ^= c + 0x94d049bb133111ebULL + (h << 6) + (h >> 2);
  return h;
}

} // namespace ovrcine
