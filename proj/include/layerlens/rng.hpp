#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace layerlens {

// All randomness in the library goes through these helpers instead of the
// <random> distribution classes, whose output is implementation-defined.
// mt19937_64 itself is fully specified, so every draw here is bit-stable
// across compilers and standard libraries.

inline double uniform_unit(std::mt19937_64& gen) {
    // 53 mantissa bits -> uniform in [0, 1)
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& gen, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(gen);
}

// Unbiased integer in [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = gen();
    } while (x >= limit);
    return x % bound;
}

inline double gaussian(std::mt19937_64& gen) {
    // Box-Muller, one value per call; the discarded mate keeps state simple.
    double u1 = uniform_unit(gen);
    while (u1 <= 0.0) u1 = uniform_unit(gen);
    const double u2 = uniform_unit(gen);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle_in_place(std::mt19937_64& gen, std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_below(gen, i));
        std::swap(items[i - 1], items[j]);
    }
}

// splitmix64 finalizer; used to mix structured keys into sub-seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(mix64(a) ^ b);
}

}  // namespace layerlens
