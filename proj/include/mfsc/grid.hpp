#pragma once

#include <cmath>
#include <cstddef>

#include "mfsc/errors.hpp"

namespace mfsc {

// Uniform grid on [0, T] with a memory/advance window delta that must be an
// exact multiple of dt. Segments then never need interpolation.
struct TimeGrid {
    double t0 = 0.0;
    double T = 0.0;
    double dt = 0.0;
    std::size_t n_steps = 0;
    std::size_t delay_steps = 0;

    double time(std::size_t k) const { return dt * static_cast<double>(k); }
    double delta() const { return dt * static_cast<double>(delay_steps); }
    // number of stored indices for a process defined through T+delta
    std::size_t n_extended() const { return n_steps + delay_steps + 1; }
};

namespace detail {
// Nearest-integer ratio check: |ratio - round(ratio)| <= tol * max(1, ratio).
inline bool integral_ratio(double num, double den, double tol, std::size_t& out) {
    const double r = num / den;
    const double rr = std::round(r);
    if (std::abs(r - rr) > tol * std::max(1.0, std::abs(r))) return false;
    if (rr < -0.5) return false;
    out = static_cast<std::size_t>(rr);
    return true;
}
}  // namespace detail

inline TimeGrid make_grid(double T, double dt, double delta) {
    if (!(T > 0.0)) throw OutOfRange("make_grid: T must be positive");
    if (!(dt > 0.0)) throw OutOfRange("make_grid: dt must be positive");
    if (delta < 0.0) throw OutOfRange("make_grid: delta must be nonnegative");
    TimeGrid g;
    g.T = T;
    g.dt = dt;
    if (!detail::integral_ratio(T, dt, 1e-9, g.n_steps) || g.n_steps == 0)
        throw NonCommensurate("T/dt is not integral");
    if (!detail::integral_ratio(delta, dt, 1e-9, g.delay_steps))
        throw NonCommensurate("delta/dt is not integral");
    return g;
}

}  // namespace mfsc
