// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace capforge {

using Rng = std::mt19937_64;

// FNV-1a, stable across platforms (std::hash is not).
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Named sub-stream of the single user seed. Every consumer of randomness
/// (clustering, init, batching, synth, ...) derives its own engine here so
/// adding a draw in one stage never shifts another stage's stream.
inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    return Rng(splitmix64(seed ^ fnv1a(name) ^ splitmix64(index + 1)));
}

/// Uniform in [0, 1) with 53 bits, independent of the standard library's
/// distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Index in [0, n) by rejection-free multiply-shift (bias negligible for small n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

template <class It>
void shuffle(It first, It last, Rng& rng) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace capforge
