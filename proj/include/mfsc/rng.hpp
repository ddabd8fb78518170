#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mfsc/grid.hpp"

namespace mfsc {

// Counter-based normal generator: every draw is a pure function of
// (seed, particle, step, substream). No state, so parallel evaluation in any
// order reproduces the same stream bit for bit.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t particle = 0;

    // substream ids used by the toolkit
    static constexpr std::uint64_t kBrownian = 0;

    static std::uint64_t mix64(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t key(std::uint64_t seed, std::uint64_t particle,
                             std::uint64_t step, std::uint64_t substream) {
        std::uint64_t k = mix64(seed ^ 0x5851f42d4c957f2dULL);
        k = mix64(k ^ particle);
        k = mix64(k ^ (step + 0x14057b7ef767814fULL));
        k = mix64(k ^ (substream + 0x2545f4914f6cdd1dULL));
        return k;
    }

    // uniform in (0, 1]
    static double uniform(std::uint64_t k) {
        return (static_cast<double>(k >> 11) + 1.0) * 0x1.0p-53;
    }

    // standard normal via Box-Muller on two decorrelated counters
    static double normal(std::uint64_t seed, std::uint64_t particle,
                         std::uint64_t step, std::uint64_t substream) {
        const std::uint64_t k = key(seed, particle, step, substream);
        const double u1 = uniform(k);
        const double u2 = uniform(mix64(k ^ 0x9e3779b97f4a7c15ULL));
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(std::uint64_t step, std::uint64_t substream = kBrownian) const {
        return normal(seed, particle, step, substream);
    }
};

// n_steps i.i.d. N(0, dt) draws for one particle.
inline std::vector<double> brownian_increments(const RngStream& stream, const TimeGrid& grid) {
    std::vector<double> out(grid.n_steps);
    const double s = std::sqrt(grid.dt);
    for (std::size_t k = 0; k < grid.n_steps; ++k)
        out[k] = s * stream.normal(k);
    return out;
}

}  // namespace mfsc
