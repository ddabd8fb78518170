#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mfsc/errors.hpp"
#include "mfsc/grid.hpp"
#include "mfsc/grid_process.hpp"

namespace mfsc {

// Nondecreasing cadlag step control with jumps at grid times, xi(0-) = 0.
// Evaluation is right-continuous: xi(t) = sum of jumps at times <= t.
struct SingularControl {
    std::vector<double> jump_times;  // sorted, within [0, T]
    std::vector<double> jump_sizes;  // >= 0

    static SingularControl single_jump(double t, double size) {
        return SingularControl{{t}, {size}};
    }

    void validate() const {
        if (jump_times.size() != jump_sizes.size())
            throw OutOfRange("SingularControl: times/sizes length mismatch");
        for (std::size_t i = 0; i < jump_times.size(); ++i) {
            if (jump_sizes[i] < 0.0)
                throw OutOfRange("SingularControl: negative jump size");
            if (i > 0 && jump_times[i] < jump_times[i - 1])
                throw OutOfRange("SingularControl: jump times not sorted");
        }
    }
};

inline double control_eval(const SingularControl& xi, double t, double T) {
    if (t < 0.0 || t > T + 1e-12) throw OutOfRange("control_eval: t outside [0, T]");
    xi.validate();
    double v = 0.0;
    for (std::size_t i = 0; i < xi.jump_times.size(); ++i)
        if (xi.jump_times[i] <= t + 1e-12) v += xi.jump_sizes[i];
    return v;
}

// Per-particle cumulative control values on the grid: cum(k, i) = xi_i(t_k),
// with xi(0-) = 0 implicit. A positive cum(0, i) is a jump at t = 0.
// SingularControl broadcasts to identical columns (open loop); adapted
// policies (threshold reflection) fill particle-dependent columns.
struct ControlPaths {
    GridProcess cum;  // (n_steps+1) x n_particles

    std::size_t n_particles() const { return cum.n_particles(); }

    // increment applied during step k (mass landing at t_{k+1})
    double increment(std::size_t k, std::size_t i) const {
        return cum.at(k + 1, i) - cum.at(k, i);
    }
    // jump at t = 0 (xi(0) - xi(0-))
    double initial_jump(std::size_t i) const { return cum.at(0, i); }

    double total(std::size_t i) const { return cum.at(cum.n_times() - 1, i); }

    bool nondecreasing() const {
        for (std::size_t i = 0; i < cum.n_particles(); ++i) {
            if (cum.at(0, i) < 0.0) return false;
            for (std::size_t k = 0; k + 1 < cum.n_times(); ++k)
                if (cum.at(k + 1, i) < cum.at(k, i) - 0.0) return false;
        }
        return true;
    }
};

inline ControlPaths broadcast_control(const SingularControl& xi, const TimeGrid& grid,
                                      std::size_t n_particles) {
    xi.validate();
    ControlPaths cp;
    cp.cum = GridProcess(grid.n_steps + 1, n_particles, 0.0);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) {
        double v = 0.0;
        for (std::size_t j = 0; j < xi.jump_times.size(); ++j)
            if (xi.jump_times[j] <= grid.time(k) + 1e-12) v += xi.jump_sizes[j];
        for (std::size_t i = 0; i < n_particles; ++i) cp.cum.at(k, i) = v;
    }
    return cp;
}

// Signed finite-variation perturbation path(s); xi + a*eta must stay an
// admissible control for a in [0, eps].
struct Perturbation {
    GridProcess cum;  // same layout as ControlPaths::cum
    double eps = 1e-2;
};

inline void check_admissible(const ControlPaths& xi, const Perturbation& eta) {
    if (eta.cum.n_times() != xi.cum.n_times() || eta.cum.n_particles() != xi.cum.n_particles())
        throw InadmissiblePerturbation("shape mismatch");
    const double a = eta.eps;
    for (std::size_t i = 0; i < xi.cum.n_particles(); ++i) {
        if (xi.cum.at(0, i) + a * eta.cum.at(0, i) < -1e-12)
            throw InadmissiblePerturbation("xi + a*eta starts below 0");
        for (std::size_t k = 0; k + 1 < xi.cum.n_times(); ++k) {
            const double d = (xi.cum.at(k + 1, i) - xi.cum.at(k, i)) +
                             a * (eta.cum.at(k + 1, i) - eta.cum.at(k, i));
            if (d < -1e-12) throw InadmissiblePerturbation("xi + a*eta not nondecreasing");
        }
    }
}

}  // namespace mfsc
