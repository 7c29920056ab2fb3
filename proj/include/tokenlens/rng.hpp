// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tlens {

// All randomness in the project flows through these helpers rather than
// <random> distributions, whose output is implementation-defined. mt19937_64
// itself is pinned by the standard, so results are reproducible everywhere.
using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Unbiased integer in [0, n).
inline uint64_t uniform_below(Rng& g, uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = g();
    } while (v >= limit);
    return v % n;
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform_double(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Box-Muller; one value per call, the pair's second half is discarded to keep
// the stream position independent of call parity.
inline double gaussian(Rng& g) {
    double u1 = uniform_double(g);
    double u2 = uniform_double(g);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Derives an independent stream from a base seed and a stream index
// (splitmix64 finalizer).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace tlens
