#pragma once

#include <cstdint>
#include <random>

namespace panelqmle {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of replication k: two splitmix64 rounds over (base, k). Independent of how many
// replications run and of which worker runs them.
inline std::uint64_t derive_stream_seed(std::uint64_t base, std::uint64_t k) {
  return splitmix64(splitmix64(base) ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t base, std::uint64_t k) { return Rng(derive_stream_seed(base, k)); }

}  // namespace panelqmle
