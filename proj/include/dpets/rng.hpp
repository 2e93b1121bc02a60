#ifndef DPETS_RNG_HPP
#define DPETS_RNG_HPP

#include <cstdint>
#include <random>

namespace dpets {

using Rng = std::mt19937_64;

// Purpose tags for independent random streams. Values are part of the
// reproducibility contract: changing them changes every seeded run.
enum class Stream : std::uint64_t {
    init = 1,
    warmup = 2,
    env = 3,
    noise = 4,
    family = 5,
    planner = 6,
    train = 7,
    data = 8,
    eval = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for the stream keyed by (seed, index, tag, sub). Streams with distinct
// keys are statistically independent; equal keys reproduce exactly.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Stream tag, std::uint64_t sub = 0)
{
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ index);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    return splitmix64(h ^ sub);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index, Stream tag, std::uint64_t sub = 0)
{
    return Rng(derive_seed(seed, index, tag, sub));
}

} // namespace dpets

#endif
