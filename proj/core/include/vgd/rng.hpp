#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vgd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for a named purpose ("synth", "node-train", ...) derived from a root seed.
inline Rng substream(std::uint64_t root_seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return Rng(splitmix64(root_seed ^ splitmix64(h)));
}

inline Rng substream(std::uint64_t root_seed, std::string_view name, std::uint64_t index) {
  return Rng(splitmix64(substream(root_seed, name)() ^ splitmix64(index + 1)));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace vgd
