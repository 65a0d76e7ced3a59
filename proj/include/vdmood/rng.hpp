#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>

namespace vdmood {

namespace detail {

// splitmix64 finalizer; good enough mixing for Monte Carlo work.
inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

inline uint64_t hash_combine(uint64_t h, uint64_t v) {
    return mix64(h ^ (v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
}

}  // namespace detail

// Counter-based generator: output i of a stream is a pure function of
// (seed, stream, i), so any consumer can be re-run in isolation and two
// consumers with distinct stream keys never share state. Same seed, same
// stream, same call sequence gives a bit-identical sequence of draws.
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : key_(detail::hash_combine(detail::mix64(seed + 0x6A09E667F3BCC909ULL), stream)) {}

    // Stream key derived from a sample's feature bytes, so the draws a sample
    // receives (probe vectors, t=1 noise) depend on its contents, not on its
    // position in a file. Duplicate rows therefore score identically.
    static Rng for_sample(uint64_t seed, std::span<const double> row, uint64_t extra = 0) {
        uint64_t h = 0xCBF29CE484222325ULL;
        for (double v : row) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            h = detail::hash_combine(h, bits);
        }
        return Rng(seed, detail::hash_combine(h, extra));
    }

    uint64_t next_u64() {
        counter_ += 0x9E3779B97F4A7C15ULL;
        return detail::mix64(counter_ ^ key_);
    }

    // Uniform on [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Draws a fresh pair per call and keeps no
    // carry-over state, so the counter fully determines the output.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double rademacher() { return (next_u64() & 1) ? 1.0 : -1.0; }

    // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

  private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace vdmood
