#pragma once

#include <cstdint>
#include <random>

namespace staci {

using Rng = std::mt19937_64;

// splitmix64 finalizer; maps (master, stream) to decorrelated child seeds.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Named streams so that every consumer of the master seed draws independently.
enum class SeedStream : std::uint64_t {
  Simulation = 1,
  Split = 2,
  Init = 3,
  Shuffle = 4,
  ChooseD = 5,
  Verifier = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
  return derive_seed(master, static_cast<std::uint64_t>(stream) << 32);
}

}  // namespace staci
