#pragma once

#include <cstdint>
#include <random>

namespace flychain {

using Rng = std::mt19937_64;

// Substream identifiers mixed into per-trial seeds.
enum class Stream : std::uint64_t { kSensorNoise = 1, kParameters = 2 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for (master seed, trial, stream). Depends only on its arguments, so a
// trial draws the same numbers whichever worker runs it.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t trial,
                                 Stream stream) {
  return splitmix64(splitmix64(splitmix64(master) ^ trial) ^
                    static_cast<std::uint64_t>(stream));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t trial, Stream stream) {
  return Rng(derive_seed(master, trial, stream));
}

}  // namespace flychain
