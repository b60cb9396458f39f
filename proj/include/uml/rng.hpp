#pragma once

#include <cmath>
#include <cstdint>

namespace uml {

// Counter-based splitmix64. Every stream is a pure function of (seed, counter),
// which makes sample generation order-independent and reproducible across
// platforms. Constants are the canonical splitmix64 ones.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; one value per call (the second is discarded to keep the
    // stream position a simple function of call count).
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

// Derives an independent stream seed from a root seed and up to three indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = SplitMix64::mix(root ^ 0x6a09e667f3bcc909ULL);
    s = SplitMix64::mix(s ^ a);
    s = SplitMix64::mix(s ^ (b + 0xbb67ae8584caa73bULL));
    s = SplitMix64::mix(s ^ (c + 0x3c6ef372fe94f82bULL));
    return s;
}

}  // namespace uml
