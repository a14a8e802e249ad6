#pragma once

#include <cstdint>
#include <random>

namespace fedauto {

using Rng = std::mt19937_64;

/// Purpose tags for random substreams. Values are part of the seed
/// derivation, so existing tags must never be renumbered.
enum class Stream : std::uint64_t {
  Data = 1,
  Partition = 2,
  Placement = 3,
  Init = 4,
  Pretrain = 5,
  Selection = 6,
  Transient = 7,
  Intermittent = 8,
  Train = 9,
  Compensatory = 10,
  WiredDrop = 11,
  Test = 12,
};

/// Derives an independent 64-bit key for (master, purpose, round, node) by
/// chaining splitmix64 finalizers over the counter tuple. Adding a new
/// consumer of randomness never shifts the keys of existing consumers.
std::uint64_t derive_seed(std::uint64_t master, Stream purpose,
                          std::uint64_t round = 0,
                          std::uint64_t node = 0) noexcept;

inline Rng make_rng(std::uint64_t master, Stream purpose,
                    std::uint64_t round = 0, std::uint64_t node = 0) {
  return Rng(derive_seed(master, purpose, round, node));
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace fedauto
