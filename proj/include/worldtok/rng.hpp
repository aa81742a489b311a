// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace worldtok {

/// Deterministic RNG: mt19937_64 engine (bit-exact across standard libraries)
/// with hand-written distributions, since the std distributions are
/// implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : mEngine(seed) {}

    /// Independent stream keyed by (seed, counter); lets training loops be
    /// resumed at any iteration without replaying earlier draws.
    static Rng
    keyed(std::uint64_t seed, std::uint64_t counter) {
        return Rng(splitmix64(seed ^ splitmix64(counter + 0x9e3779b97f4a7c15ull)));
    }

    std::uint64_t next() { return mEngine(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(mEngine() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t
    below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = mEngine();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double
    normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    static std::uint64_t
    splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

  private:
    std::mt19937_64 mEngine;
};

} // namespace worldtok
