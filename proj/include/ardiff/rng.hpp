#pragma once

#include <cmath>
#include <cstdint>

#include "ardiff/mat.hpp"

namespace ardiff {

// Counter-based random streams. Every draw is a pure function of
// (seed, role, step, index), so producers can run ahead or in parallel
// without changing results, and resume is trivially exact.

enum class RngRole : uint64_t {
    WeightInit = 1,
    BatchClass = 2,
    BatchChain = 3,
    BatchTexture = 4,
    BatchFloor = 5,
    Timestep = 6,
    DiffusionNoise = 7,
    SampleInit = 8,
    Holdout = 9,
};

namespace detail {

inline uint64_t splitmix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

struct RngStream {
    uint64_t state;

    RngStream(uint64_t seed, RngRole role, uint64_t step, uint64_t lane = 0) {
        uint64_t h = detail::splitmix64(seed);
        h = detail::splitmix64(h ^ static_cast<uint64_t>(role));
        h = detail::splitmix64(h ^ step);
        h = detail::splitmix64(h ^ lane);
        state = h;
    }

    uint64_t word(uint64_t index) const { return detail::splitmix64(state ^ index); }

    // uniform in [0, 1)
    double uniform(uint64_t index) const { return (word(index) >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t index, uint64_t n) const {
        // 64-bit multiply-shift; bias is negligible for desk-scale n.
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(word(index)) * n) >> 64);
    }

    // standard normal via Box-Muller; consumes word indices 2i and 2i+1
    double normal(uint64_t index) const {
        const uint64_t w1 = word(2 * index);
        const uint64_t w2 = word(2 * index + 1);
        const double u1 = ((w1 >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = (w2 >> 11) * 0x1.0p-53;        // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // normal truncated to [-clip, clip] sigmas, then scaled by std.
    // Rejection with a per-element substream keeps the draw order-free.
    double trunc_normal(uint64_t index, double stddev, double clip = 2.0) const {
        for (uint64_t attempt = 0; attempt < 32; ++attempt) {
            const double x = normal(index * 32 + attempt);
            if (x >= -clip && x <= clip) return x * stddev;
        }
        return 0.0;  // probability ~(0.046)^32; pin to the mode
    }

    void fill_normal(Mat& m, double scale = 1.0) const {
        for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = normal(i) * scale;
    }

    void fill_trunc_normal(Mat& m, double stddev, double clip = 2.0) const {
        for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = trunc_normal(i, stddev, clip);
    }
};

}  // namespace ardiff
