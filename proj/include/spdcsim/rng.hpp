#pragma once

#include <cmath>
#include <cstdint>

#include "spdcsim/constants.hpp"

namespace spdcsim {

/// @brief Deterministic 64-bit generator (splitmix64 finalizer over a Weyl sequence).
///
/// Small state, full-period, reproducible across platforms. Each Monte Carlo
/// event gets its own decorrelated stream via event_stream(), so results are
/// independent of how events are partitioned across workers.
class splitmix64 {
public:
    explicit splitmix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform01();
    }

    /// Standard normal deviate, Box-Muller trigonometric form.
    /// Draws exactly two uniforms per call so streams stay alignment-stable.
    double gaussian() noexcept {
        const double u1 = 1.0 - uniform01(); // (0, 1], keeps the log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
    }

private:
    std::uint64_t state_;
};

/// @brief Decorrelated per-event substream: same (seed, index) always yields the
/// same stream no matter which worker consumes it or in what order.
inline splitmix64 event_stream(std::uint64_t seed, std::uint64_t index) noexcept {
    splitmix64 g(seed);
    const std::uint64_t a = g.next();
    return splitmix64(a ^ (index + 0x9E3779B97F4A7C15ull));
}

} // namespace spdcsim
