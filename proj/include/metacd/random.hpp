#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "metacd/diff/tape.hpp"

namespace metacd {

using diff::Rng;

/// splitmix64 finalizer; used to derive independent child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `a` (and optionally sub-stream `b`) under `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(base) ^ (a + 0x632be59bd9b4e019ULL)) ^ (b + 0x8cb92ba72f3d8dd7ULL));
}

/// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  // 53 random bits, shifted off zero by half an ulp.
  const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return u + 0.5 / 9007199254740992.0;
}

inline double standard_gumbel(Rng& rng) { return -std::log(-std::log(uniform_open(rng))); }

/// Box-Muller; implemented here so draws are identical across standard libraries.
inline double standard_normal(Rng& rng) {
  const double u1 = uniform_open(rng);
  const double u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

inline double normal(Rng& rng, double mean, double sd) { return mean + sd * standard_normal(rng); }

}  // namespace metacd
