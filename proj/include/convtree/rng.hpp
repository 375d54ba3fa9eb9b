#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace convtree {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the named sub-stream `stream` (and optional index) of `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(master);
  for (unsigned char c : stream) h = splitmix64(h ^ c);
  return splitmix64(h ^ splitmix64(index + 0x51ED2701ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

}  // namespace convtree
