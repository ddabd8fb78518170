#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mfsc/rbsde.hpp"

namespace mfsc {

// Inputs of the optimal-stopping verification: realized driver values along a
// solved RBSDE, its barrier and terminal data.
struct StoppingProblem {
    TimeGrid grid;
    GridProcess F;   // n_steps x N driver values (as the solver consumed them)
    GridProcess S;   // (n_steps+1) x N barrier
    std::vector<double> R;

    static StoppingProblem from_solution(const RbsdeSolution& sol, const BarrierSpec& barrier,
                                         const TimeGrid& grid) {
        return {grid, sol.F_used, barrier.S, barrier.R};
    }
};

// Per-particle grid index in [t_index, n_steps]; computed by a forward scan of
// adapted quantities only.
struct StoppingTime {
    std::vector<std::size_t> tau;

    double mean() const {
        double s = 0.0;
        for (auto t : tau) s += static_cast<double>(t);
        return tau.empty() ? 0.0 : s / static_cast<double>(tau.size());
    }
};

// first s >= t_index with Y(s) <= S(s) + tol, else n_steps; the default
// tolerance only guards float noise since reflection binds exactly
StoppingTime hitting_time(const RbsdeSolution& sol, const BarrierSpec& barrier,
                          std::size_t t_index, double tol_scale = 1e-8);

// first s with K(s) > K(t_index^-) + tol_K at t_index = 0 (the paper's
// inf{K(s) > 0}); for t_index > 0 the baseline is K(t_index)
StoppingTime k_increase_time(const RbsdeSolution& sol, std::size_t t_index,
                             double tol_K = 0.0);

struct SnellReport {
    double value_at_tau = 0.0;       // E[int F + S 1 + R 1] at tau-hat
    double y_t = 0.0;                // mean Y(t)
    double gap_tau = 0.0;            // value_at_tau - y_t
    double gap_tau_se = 0.0;
    double best_candidate_gap = 0.0; // max over candidates minus value at tau-hat
    double best_candidate_se = 0.0;
    std::size_t n_candidates = 0;
};

// compares the Snell value at tau-hat with Y(t) and with random two-parameter
// threshold stopping rules tau = inf{s >= t : X(s) <= a or s >= b}
SnellReport snell_check(const StoppingProblem& prob, const RbsdeSolution& sol,
                        const ParticleEnsemble& ensemble, std::size_t t_index,
                        std::size_t n_candidate, std::uint64_t seed = 1234);

struct KFormulaReport {
    double mean_max_abs = 0.0;  // mean over particles of max_t |K(T)-K(T-t) - RHS(t)|
    double se = 0.0;
};

// running-max representation of K against the solved K, using stored Z and
// Brownian increments
KFormulaReport k_runningmax_check(const StoppingProblem& prob, const RbsdeSolution& sol,
                                  const ParticleEnsemble& ensemble);

// 1-d Markov reduction for the lattice oracle: X Brownian with constant drift
// and volatility, driver affine in y, barrier S(t,x), terminal R(x(T)).
struct MarkovStoppingSpec {
    double x0 = 0.0;
    double drift = 0.0;
    double sigma = 1.0;
    double T = 1.0;
    std::function<double(double, double)> barrier;   // (t, x)
    std::function<double(double)> terminal;          // x(T)
    double driver_const = 0.0;
    double driver_y = 0.0;  // F(t, y) = driver_const + driver_y * y
    bool reducible = true;
};

// Y(0) by backward induction on a recombining binomial lattice with n_steps
// time layers; independent of the regression solver.
double dp_oracle(const MarkovStoppingSpec& spec, std::size_t n_steps);

}  // namespace mfsc
