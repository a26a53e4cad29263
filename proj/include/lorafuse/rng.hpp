#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lorafuse {

// All randomness in a run flows from one 64-bit seed. Independent streams
// are derived by hashing a textual label into the parent seed (FNV-1a)
// and finalizing with the SplitMix64 mixer, so the same (seed, label)
// pair always yields the same stream and distinct labels decorrelate.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

std::mt19937_64 make_engine(std::uint64_t seed, std::string_view label);

}  // namespace lorafuse
