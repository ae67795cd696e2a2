#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace falcon {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; derives independent stream seeds from one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream ss(state);
  ss >> rng;
}

}  // namespace falcon
