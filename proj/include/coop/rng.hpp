#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace coop {

using Rng = std::mt19937_64;

/// One step of the splitmix64 sequence.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed for a named sub-stream. Mixing is keyed on
/// every component, so stream (seed, 3, 7) never depends on how many other
/// streams exist.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(seed, keys));
}

// Stream tags, so that weight streams and noise streams never collide.
enum class Stream : std::uint64_t {
  kScene = 1,
  kPoseNoise = 2,
  kEncoder = 3,
  kLcWeights = 4,
  kPacWeights = 5,
  kFusionWeights = 6,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace coop
