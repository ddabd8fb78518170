#include "mfsc/stopping.hpp"

#include <algorithm>
#include <cmath>

#include "mfsc/rng.hpp"

namespace mfsc {

StoppingTime hitting_time(const RbsdeSolution& sol, const BarrierSpec& barrier,
                          std::size_t t_index, double tol_scale) {
    const std::size_t N = sol.Y.n_particles();
    const std::size_t n = barrier.S.n_times() - 1;
    double scale = 1.0;
    for (std::size_t k = 0; k <= n; ++k)
        for (std::size_t i = 0; i < N; ++i) scale = std::max(scale, std::abs(sol.Y.at(k, i)));
    const double tol = tol_scale * scale;

    StoppingTime st;
    st.tau.assign(N, n);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = t_index; k <= n; ++k)
            if (sol.Y.at(k, i) <= barrier.S.at(k, i) + tol) {
                st.tau[i] = k;
                break;
            }
    return st;
}

StoppingTime k_increase_time(const RbsdeSolution& sol, std::size_t t_index, double tol_K) {
    const std::size_t N = sol.K.n_particles();
    const std::size_t n = sol.K.n_times() - 1;
    StoppingTime st;
    st.tau.assign(N, n);
    for (std::size_t i = 0; i < N; ++i) {
        // K(0-) = 0 at the root; at interior t the paper compares against K(t)
        const double base = (t_index == 0) ? 0.0 : sol.K.at(t_index, i);
        for (std::size_t k = t_index; k <= n; ++k)
            if (sol.K.at(k, i) > base + tol_K) {
                st.tau[i] = k;
                break;
            }
    }
    return st;
}

namespace {

// E[int_t^tau F ds + S(tau) 1_{tau<T} + R 1_{tau=T}] per particle
std::vector<double> stopped_value(const StoppingProblem& prob, const StoppingTime& tau,
                                  std::size_t t_index) {
    const std::size_t N = prob.F.n_particles();
    const std::size_t n = prob.grid.n_steps;
    std::vector<double> v(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (std::size_t k = t_index; k < tau.tau[i]; ++k) acc += prob.F.at(k, i) * prob.grid.dt;
        acc += (tau.tau[i] < n) ? prob.S.at(tau.tau[i], i) : prob.R[i];
        v[i] = acc;
    }
    return v;
}

}  // namespace

SnellReport snell_check(const StoppingProblem& prob, const RbsdeSolution& sol,
                        const ParticleEnsemble& ensemble, std::size_t t_index,
                        std::size_t n_candidate, std::uint64_t seed) {
    const std::size_t N = prob.F.n_particles();
    const std::size_t n = prob.grid.n_steps;

    BarrierSpec b;
    b.S = prob.S;
    b.R = prob.R;
    const StoppingTime tau_hat = hitting_time(sol, b, t_index);
    const std::vector<double> v_hat = stopped_value(prob, tau_hat, t_index);

    SnellReport rep;
    rep.value_at_tau = mean_of(v_hat);
    rep.y_t = mean_of(sol.Y.row(t_index));
    rep.gap_tau = rep.value_at_tau - rep.y_t;
    {
        std::vector<double> diff(N);
        for (std::size_t i = 0; i < N; ++i) diff[i] = v_hat[i] - sol.Y.at(t_index, i);
        rep.gap_tau_se = stderr_of(diff);
    }

    // candidate threshold rules on the state: stop when X <= a or s >= b
    double xmin = ensemble.x(t_index, 0), xmax = xmin;
    for (std::size_t k = t_index; k <= n; ++k)
        for (std::size_t i = 0; i < N; ++i) {
            xmin = std::min(xmin, ensemble.x(k, i));
            xmax = std::max(xmax, ensemble.x(k, i));
        }
    rep.n_candidates = n_candidate;
    double best = -1e300;
    double best_se = 0.0;
    for (std::size_t c = 0; c < n_candidate; ++c) {
        const double u1 = RngStream::uniform(RngStream::key(seed, c, 0, 7));
        const double u2 = RngStream::uniform(RngStream::key(seed, c, 1, 7));
        const double a = xmin + u1 * (xmax - xmin);
        const std::size_t bstop =
            t_index + static_cast<std::size_t>(u2 * static_cast<double>(n - t_index));
        StoppingTime tc;
        tc.tau.assign(N, n);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = t_index; k <= n; ++k)
                if (ensemble.x(k, i) <= a || k >= bstop) {
                    tc.tau[i] = k;
                    break;
                }
        const std::vector<double> vc = stopped_value(prob, tc, t_index);
        const double m = mean_of(vc);
        if (m > best) {
            best = m;
            std::vector<double> diff(N);
            for (std::size_t i = 0; i < N; ++i) diff[i] = vc[i] - v_hat[i];
            best_se = stderr_of(diff);
        }
    }
    if (n_candidate > 0) {
        rep.best_candidate_gap = best - rep.value_at_tau;
        rep.best_candidate_se = best_se;
    }
    return rep;
}

KFormulaReport k_runningmax_check(const StoppingProblem& prob, const RbsdeSolution& sol,
                                  const ParticleEnsemble& ensemble) {
    const std::size_t N = prob.F.n_particles();
    const std::size_t n = prob.grid.n_steps;
    std::vector<double> maxdiff(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double tail_f = 0.0, tail_z = 0.0, runmax = 0.0, md = 0.0;
        const double kT = sol.K.at(n, i);
        for (std::size_t s = 0; s <= n; ++s) {
            if (s > 0) {
                const std::size_t j = n - s;
                tail_f += prob.F.at(j, i) * prob.grid.dt;
                tail_z += sol.Z.at(j, i) * ensemble.db(j, i);
            }
            const double bracket = prob.R[i] + tail_f - tail_z - prob.S.at(n - s, i);
            runmax = std::max(runmax, -bracket);  // {x}^- = max(-x, 0), running max
            const double lhs = kT - sol.K.at(n - s, i);
            md = std::max(md, std::abs(lhs - runmax));
        }
        maxdiff[i] = md;
    }
    KFormulaReport rep;
    rep.mean_max_abs = mean_of(maxdiff);
    rep.se = stderr_of(maxdiff);
    return rep;
}

double dp_oracle(const MarkovStoppingSpec& spec, std::size_t n_steps) {
    if (!spec.reducible)
        throw NotMarkovReducible("problem is not flagged 1-d Markov reducible");
    if (n_steps == 0) throw OutOfRange("dp_oracle: need at least one step");
    const double dtl = spec.T / static_cast<double>(n_steps);
    const double dx = spec.sigma * std::sqrt(dtl);

    // recombining binomial wavefront, shrinking toward the root
    std::vector<double> v(2 * n_steps + 1);
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double x = spec.x0 + spec.drift * spec.T +
                         dx * (static_cast<double>(j) - static_cast<double>(n_steps));
        v[j] = spec.terminal ? spec.terminal(x) : 0.0;
    }
    for (std::size_t k = n_steps; k-- > 0;) {
        const double t = dtl * static_cast<double>(k);
        std::vector<double> nv(2 * k + 1);
        for (std::size_t j = 0; j < nv.size(); ++j) {
            const double x =
                spec.x0 + spec.drift * t + dx * (static_cast<double>(j) - static_cast<double>(k));
            const double cont = 0.5 * (v[j] + v[j + 2]);
            const double withf = cont + (spec.driver_const + spec.driver_y * cont) * dtl;
            const double s = spec.barrier ? spec.barrier(t, x) : -1e300;
            nv[j] = std::max(withf, s);
        }
        v = std::move(nv);
    }
    return v[0];
}

}  // namespace mfsc
