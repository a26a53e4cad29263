#include "lorafuse/rng.hpp"

namespace lorafuse {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    // FNV-1a over the label, then SplitMix64 to spread the bits.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(seed ^ h);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::string_view label) {
    return std::mt19937_64(derive_seed(seed, label));
}

}  // namespace lorafuse
