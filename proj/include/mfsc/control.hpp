#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "mfsc/control_path.hpp"
#include "mfsc/forward.hpp"
#include "mfsc/rbsde.hpp"
#include "mfsc/regression.hpp"
#include "mfsc/stopping.hpp"

namespace mfsc {

// Structure of the memory (x-bar) or law-segment feature a coefficient reads:
// the averaging functional <F, seg> = int_0^delta a(r) seg(r) dr or evaluation
// seg(t0). Keeping the functional explicit gives the Riesz dual in closed
// form: <F, c^t> with c^t = {c(t+r)}.
struct MemoryFunctional {
    enum class Kind { none, average, eval };
    Kind kind = Kind::none;
    std::vector<double> weights;  // a at offsets 0..delta (average)
    double t0 = 0.0;              // offset in [0, delta] (eval)

    bool active() const { return kind != Kind::none; }

    // <F, seg> for a segment indexed by offset (either orientation; the caller
    // fixes the interpretation)
    double apply(std::span<const double> seg, double dt) const;

    // <F, p^t> = averaging integral or evaluation over the forward window of p
    double dual(std::span<const double> p_path, std::size_t t_index, std::size_t delay_steps,
                double dt) const;
};

// evaluation context for control-problem coefficients
struct CtrlContext {
    double t = 0.0;
    double x = 0.0;
    double w = 0.0;   // memory feature <F, x-bar>
    double v = 0.0;   // law-segment feature over the mean segment
    double xi = 0.0;  // xi(t)
    LawMoments law;
};

using CtrlFn = std::function<double(const CtrlContext&)>;
using CtrlGradFn = std::function<std::array<double, 2>(const CtrlContext&)>;

// scalar coefficient with the partial derivatives the maximum principle needs
struct Coefficient {
    CtrlFn value, dx, dw, dxi, dv;
    CtrlGradFn dmu;
    MemoryFunctional mem;     // x-bar feature structure
    MemoryFunctional lawseg;  // m-bar (law-mean segment) feature structure

    double eval(const CtrlContext& c) const { return value ? value(c) : 0.0; }
    double eval_dx(const CtrlContext& c) const { return dx ? dx(c) : 0.0; }
    double eval_dw(const CtrlContext& c) const { return dw ? dw(c) : 0.0; }
    double eval_dxi(const CtrlContext& c) const { return dxi ? dxi(c) : 0.0; }
    double eval_dv(const CtrlContext& c) const { return dv ? dv(c) : 0.0; }
    std::array<double, 2> eval_dmu(const CtrlContext& c) const {
        return dmu ? dmu(c) : std::array<double, 2>{0.0, 0.0};
    }
};

struct ControlProblem {
    Coefficient b, sigma, f;
    std::function<double(double)> lambda;
    std::function<double(double, double)> h;    // h(t, x)
    std::function<double(double, double)> h_x;  // dh/dx
    std::function<double(double, LawMoments)> g;
    std::function<double(double, LawMoments)> g_x;
    std::function<std::array<double, 2>(double, LawMoments)> g_mu;
    std::vector<double> alpha;  // initial path, delay_steps+1 values
    RegressionSpec regression;  // basis used by adjoint/VI regressions

    double eval_lambda(double t) const { return lambda ? lambda(t) : 0.0; }
    double eval_h(double t, double x) const { return h ? h(t, x) : 0.0; }
    double eval_h_x(double t, double x) const { return h_x ? h_x(t, x) : 0.0; }
    double eval_g(double x, LawMoments m) const { return g ? g(x, m) : 0.0; }
    double eval_g_x(double x, LawMoments m) const { return g_x ? g_x(x, m) : 0.0; }
    std::array<double, 2> eval_g_mu(double x, LawMoments m) const {
        return g_mu ? g_mu(x, m) : std::array<double, 2>{0.0, 0.0};
    }

    // finite-difference consistency of the declared derivatives of f, g, h
    // and the dynamics coefficients at sampled points
    void validate(std::uint64_t seed = 23, std::size_t n_samples = 200) const;
};

// forward-simulation view of the controlled dynamics (open loop)
CoefficientSpec forward_spec(const ControlProblem& prob, const TimeGrid& grid);

// the paper's dual operator on a single path defined through T+delta:
// averaging -> int_0^delta a(r) p(t+r) dr, evaluation -> p(t + t0)
double dual_operator(const MemoryFunctional& functional, std::span<const double> p_path,
                     std::size_t t_index, const TimeGrid& grid);

// both components of the Hamiltonian random measure dH = H0 dt + (...) dxi
struct HamiltonianValue {
    double h0 = 0.0;                // f + b p0 + sigma q0 + <p1, beta(m)>
    double singular_density = 0.0;  // lambda(t) p0 + h(t, x)
};

HamiltonianValue hamiltonian(const ControlProblem& prob, const CtrlContext& ctx, double p0,
                             double q0, const std::array<double, 2>& p1,
                             const std::array<double, 2>& beta_m);

// adjoint processes; the dt-drift actually used (dH0/dx + E[dual | F_t]) is
// kept because the stopping connection reuses it as the driver F(t)
struct AdjointPair {
    GridProcess p0, q0;                  // (n+delay+1) x N
    std::array<GridProcess, 2> p1, q1;   // moment coordinates
    GridProcess drift_x;                 // n x N
};

AdjointPair solve_adjoints(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                           const ControlPaths& xi);

// performance functional per particle (Monte Carlo average is the caller's)
std::vector<double> j_value(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                            const ControlPaths& xi);

struct DerivativeReport {
    double analytic = 0.0;
    double analytic_se = 0.0;
    // finite differences (J(xi + a eta) - J(xi))/a with common random numbers
    std::map<double, double> fd;
    std::map<double, double> fd_se;  // se of (analytic - fd) pairing
};

DerivativeReport directional_derivative(const ControlProblem& prob,
                                        const ParticleEnsemble& ensemble,
                                        const ControlPaths& xi, const Perturbation& eta,
                                        const AdjointPair& adj, const TimeGrid& grid,
                                        std::uint64_t seed,
                                        const std::vector<double>& fd_steps = {1e-2, 1e-3});

struct NecessaryReport {
    std::vector<double> mean_by_time;    // cross-particle mean of lambda p0 + h
    std::vector<double> se_by_time;
    double max_excursion = 0.0;          // max over grid times of the mean
    double max_excursion_se = 0.0;       // se at the arg max
    double complementarity = 0.0;        // mean over particles of sum E[.|feat] dxi
    double complementarity_se = 0.0;
};

NecessaryReport check_necessary(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                                const ControlPaths& xi, const AdjointPair& adj);

struct SufficientReport {
    double max_curvature = 0.0;  // largest sampled second difference (<= tol if concave)
    NecessaryReport vi;
};

// concavity probes on g and the Hamiltonian density plus the same variational
// inequalities; throws NotConcave when a probe shows positive curvature
SufficientReport check_sufficient(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                                  const ControlPaths& xi, const AdjointPair& adj,
                                  std::uint64_t seed = 99, std::size_t n_probes = 1000);

// minimal-push reflection policy keeping X <= level (lambda constant negative)
struct ControlledRun {
    ParticleEnsemble ens;
    ControlPaths xi;
};

ControlledRun simulate_threshold(const ControlProblem& prob, double level, const TimeGrid& grid,
                                 std::size_t n_particles, std::uint64_t seed);

struct ThresholdSearch {
    double best_level = 0.0;
    std::vector<double> levels;
    std::vector<double> j_mean;
    std::vector<double> j_se;
};

// grid search over levels with common random numbers, then a golden-section
// refinement of the realized J(a) between the argmax neighbors
ThresholdSearch optimize_threshold(const ControlProblem& prob, std::vector<double> levels,
                                   const TimeGrid& grid, std::size_t n_particles,
                                   std::uint64_t seed, bool refine = true);

// S = h/lambda0, R = dg/dx(T), Y = p0, Z = q0, dK = (dh/dx) dxi
struct Connection {
    BarrierSpec barrier;
    RbsdeSolution assembled;
    std::vector<std::size_t> first_move;  // first grid index with xi > 0, else n
};

Connection assemble_stopping_connection(const ControlProblem& prob,
                                        const ParticleEnsemble& ensemble,
                                        const ControlPaths& xi_hat, const AdjointPair& adj);

struct ConnectionReport {
    double min_gap = 0.0;                 // min over (t, particle) of Y - S
    double frac_below_band = 0.0;         // fraction of (t, particle) gaps below -band
    bool per_time_mean_gap_ok = true;     // mean(Y-S) >= -3 se at every grid time
    double skorokhod = 0.0;
    double skorokhod_se = 0.0;
    bool k_nondecreasing = true;
    double tau_k_agreement = 0.0;         // inf{K > 0} vs first xi movement
    double tau_y_agreement = 0.0;         // inf{Y <= S} vs first xi movement
};

// band: the regression-noise allowance on the pathwise gap (the discrete
// reflection resolves the barrier to O(sigma sqrt(dt)) and the VI slope in x
// is (2 + c1)); gaps below -band are counted, not hard-failed, because the
// minimum over ~1e5 fitted points is an extreme statistic
ConnectionReport connection_report(const Connection& conn, const ControlProblem& prob,
                                   const ParticleEnsemble& ensemble, const ControlPaths& xi,
                                   double band);

}  // namespace mfsc
