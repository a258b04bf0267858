#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace loopdyn {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used for stream derivation and content hashing.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t combine_seed(std::uint64_t seed, std::uint64_t value) noexcept {
  return mix64(seed ^ mix64(value + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t combine_seed(std::uint64_t seed, std::string_view value) noexcept {
  return combine_seed(seed, fnv1a64(value));
}

/// Stream seed for one trajectory arm. A, B and Z of the same seed unit get
/// different inputs here only when their arm labels differ.
inline std::uint64_t derive_stream(std::uint64_t master_seed, std::string_view family, std::string_view ic,
                                   int run, std::string_view arm) noexcept {
  std::uint64_t s = combine_seed(master_seed, family);
  s = combine_seed(s, ic);
  s = combine_seed(s, static_cast<std::uint64_t>(run));
  return combine_seed(s, arm);
}

inline Rng step_rng(std::uint64_t stream, int step) {
  return Rng(combine_seed(stream, static_cast<std::uint64_t>(step)));
}

// Portable draws: std::normal_distribution is implementation-defined, these are not.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace loopdyn
