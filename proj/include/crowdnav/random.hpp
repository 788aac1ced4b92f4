#pragma once

#include <cstdint>
#include <random>

namespace crowdnav {

using Rng = std::mt19937_64;

/// Seed streams. Each consumer of randomness draws from its own stream so
/// that, e.g., evaluation seeds never overlap training seeds.
enum class SeedStream : std::uint64_t {
  training = 1,
  validation = 2,
  evaluation = 3,
  network_init = 4,
  replay_sampler = 5,
  exploration = 6,
  icm_init = 7,
  re3_init = 8,
  human_goals = 9,
  demonstrations = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: the seed for item `index` of `stream` is a
/// pure function of (master, stream, index), so any episode can be replayed
/// in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace crowdnav
