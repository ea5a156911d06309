#pragma once

#include <cstdint>
#include <random>

#include "bnlab/core.hpp"

namespace bnlab {

using Engine = std::mt19937_64;

// splitmix64 finalizer; maps (base, stream) to decorrelated child seeds.
inline Seed derive_seed(Seed base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Engine make_engine(Seed seed) { return Engine{seed}; }

}  // namespace bnlab
