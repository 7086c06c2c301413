#pragma once

#include <cstdint>
#include <random>

#include "metaradar/geometry.hpp"

namespace metaradar {

// All randomness flows from a single manifest seed. Substreams are derived
// with splitmix64 so that workers can draw independently of scheduling order.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (tag + 0x51ed2701));
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1) ^ (b >> 1);
}

// Substream seed for (seed, tag, index). tag identifies the purpose (noise,
// optimizer init, ...), index the cycle or block the stream belongs to.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return mix_seed(mix_seed(seed, tag), index);
}

using Engine = std::mt19937_64;

// Uniform in [0,1) with 53-bit resolution.
inline double uniform01(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

inline double uniform_range(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

inline std::uint32_t uniform_below(Engine& eng, std::uint32_t n) {
  return static_cast<std::uint32_t>(eng() % n);
}

// Box-Muller. std::normal_distribution is not pinned by the standard, so the
// transform is spelled out to keep sequences identical everywhere.
inline double gaussian(Engine& eng) {
  double u1 = uniform01(eng);
  double u2 = uniform01(eng);
  while (u1 <= 0.0) u1 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

}  // namespace metaradar
