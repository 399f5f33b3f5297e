#pragma once

#include <cstdint>

namespace mrbsdej {

/// SplitMix64 finalizer; a bijective avalanche mix of one 64-bit word.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based stream derivation: every (seed, a, b, c) triple maps to an
/// independent-looking 64-bit word, so draws never depend on evaluation order.
constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a,
                                     std::uint64_t b, std::uint64_t c) noexcept {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632BE59BD9B4E019ULL));
    h = splitmix64(h ^ (c + 0x85157AF5ULL));
    return h;
}

/// Uniform draw in [0, 1) with 53 random bits.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t particle,
                                 std::uint64_t scenario, std::uint64_t step) noexcept {
    return static_cast<double>(counter_hash(seed, particle, scenario, step) >> 11) * 0x1.0p-53;
}

}  // namespace mrbsdej
