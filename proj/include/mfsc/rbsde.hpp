#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mfsc/forward.hpp"
#include "mfsc/segments.hpp"
#include "mfsc/grid_process.hpp"
#include "mfsc/regression.hpp"

namespace mfsc {

// Moment coordinates of the joint path law of (Y^s, Z^s): means and second
// moments averaged over the advanced window.
struct PathLawMoments {
    double y_mean = 0.0;
    double y_sq = 0.0;
    double z_mean = 0.0;
    double z_sq = 0.0;
};

struct DriverContext {
    double t = 0.0;
    double y = 0.0;                      // Y(t) (continuation value in the scheme)
    double z = 0.0;                      // Z(t)
    std::span<const double> y_adv;       // E[Y(t+r)|F_t], r = 0..delta
    std::span<const double> z_adv;       // E[Z(t+r)|F_t]
    PathLawMoments law;                  // L(Y^t, Z^t) in moment coordinates
};

struct DriverSpec {
    std::function<double(const DriverContext&)> F;
    double lipschitz_c = 1.0;  // C in beta = 1 + 8 rho C^2
    double zero_bound = 0.0;   // declared |F(t,0,0,0,0,L(0,0))| bound

    double eval(const DriverContext& c) const { return F ? F(c) : 0.0; }

    // sampled consistency of the declarations: |F(t,0,...,L(0,0))| at grid
    // times against zero_bound, and |dF|^2 against lipschitz_c^2 times the
    // squared argument perturbations (segments measured in the grid sup norm)
    void validate(const TimeGrid& grid, std::uint64_t seed = 17,
                  std::size_t n_samples = 1000) const;
};

struct BarrierSpec {
    GridProcess S;          // (n_steps+1) x N
    std::vector<double> R;  // terminal value per particle

    // assumption (iii): S nondecreasing per path; optional per the
    // --unsafe-barrier escape hatch for oracle comparisons
    void validate(bool unsafe_barrier = false) const;
};

BarrierSpec make_barrier(const ParticleEnsemble& ens,
                         const std::function<double(double, double)>& S_fn,  // (t, x)
                         const std::function<double(double)>& R_fn);        // x(T)

struct RbsdeSolution {
    GridProcess Y;       // (n+delay+1) x N, frozen at R beyond T
    GridProcess Z;       // (n+delay+1) x N, zero beyond T
    GridProcess K;       // (n+1) x N, cumulative, K(0-)=0
    GridProcess F_used;  // n x N, driver values consumed by the last sweep
    std::vector<double> picard_norms;  // successive-difference H_beta values

    double y0_mean() const { return mean_of(Y.row(0)); }
};

struct RbsdeOptions {
    double rho = 4.0;
    double tol = 1e-12;
    std::size_t max_iter = 12;
    RegressionSpec regression;
    bool unsafe_barrier = false;
    bool penalization = false;   // cross-check reflection by penalty instead of max
    double penalty = 50.0;
};

// One application of the contraction map Phi, discretized backward with
// least-squares conditional expectations and reflection by max.
RbsdeSolution backward_sweep(const DriverSpec& driver, const BarrierSpec& barrier,
                             const RbsdeSolution& prev, const ParticleEnsemble& ensemble,
                             const TimeGrid& grid, const RbsdeOptions& opts = {});

// Picard iteration of backward_sweep from (y, z) = (0, 0) until the H_beta
// successive-difference norm (beta = 1 + 8 rho C^2) drops below tol.
RbsdeSolution solve_picard(const DriverSpec& driver, const BarrierSpec& barrier,
                           const ParticleEnsemble& ensemble, const TimeGrid& grid,
                           const RbsdeOptions& opts = {});

// E[int_0^{T+delta} e^{beta t}(Y^2 + Z^2) dt], Monte Carlo over particles,
// trapezoid in time.
double h_beta_norm(const GridProcess& Y, const GridProcess& Z, double beta,
                   const TimeGrid& grid);

// mean over particles of sum_k (Y_k - S_k) dK_k (flat-off-the-barrier check)
double skorokhod_residual(const RbsdeSolution& sol, const BarrierSpec& barrier);

// forward window {P(t + r)} of a stored grid process extended through T+delta;
// entries at grid times beyond T carry the frozen values the process was
// built with (R for Y, zero for Z)
AdvancedSegment advanced_view(const GridProcess& p, std::size_t particle, std::size_t t_index,
                              const TimeGrid& grid);

}  // namespace mfsc
