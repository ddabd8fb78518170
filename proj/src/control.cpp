#include "mfsc/control.hpp"

#include <algorithm>
#include <cmath>

#include "mfsc/rng.hpp"

namespace mfsc {

double MemoryFunctional::apply(std::span<const double> seg, double dt) const {
    switch (kind) {
        case Kind::none:
            return 0.0;
        case Kind::eval: {
            const double j = t0 / dt;
            const auto idx = static_cast<std::size_t>(std::llround(j));
            if (idx >= seg.size()) throw OffsetOutOfRange("eval offset beyond delta");
            return seg[idx];
        }
        case Kind::average: {
            if (weights.size() != seg.size())
                throw OffsetOutOfRange("averaging weights do not match segment length");
            if (seg.size() < 2) return 0.0;
            double acc = 0.0;
            for (std::size_t j = 0; j < seg.size(); ++j) {
                double v = weights[j] * seg[j];
                if (j == 0 || j + 1 == seg.size()) v *= 0.5;
                acc += v;
            }
            return acc * dt;
        }
    }
    return 0.0;
}

double MemoryFunctional::dual(std::span<const double> p_path, std::size_t t_index,
                              std::size_t delay_steps, double dt) const {
    if (kind == Kind::none) return 0.0;
    if (t_index + delay_steps >= p_path.size())
        throw OffsetOutOfRange("dual: path not defined through t+delta");
    std::vector<double> fwd(delay_steps + 1);
    for (std::size_t r = 0; r <= delay_steps; ++r) fwd[r] = p_path[t_index + r];
    return apply(fwd, dt);
}

double dual_operator(const MemoryFunctional& functional, std::span<const double> p_path,
                     std::size_t t_index, const TimeGrid& grid) {
    if (functional.kind == MemoryFunctional::Kind::eval &&
        (functional.t0 < -1e-12 || functional.t0 > grid.delta() + 1e-12))
        throw OffsetOutOfRange("evaluation offset outside [0, delta]");
    return functional.dual(p_path, t_index, grid.delay_steps, grid.dt);
}

void ControlProblem::validate(std::uint64_t seed, std::size_t n_samples) const {
    const double e = 1e-5;
    auto u = [&](std::uint64_t a, std::uint64_t b) {
        return 2.0 * RngStream::uniform(RngStream::key(seed, a, b, 15)) - 1.0;
    };
    auto fd_ok = [e](double plus, double minus, double declared) {
        const double fd = (plus - minus) / (2.0 * e);
        return std::abs(fd - declared) <= 1e-4 * std::max(1.0, std::abs(declared));
    };
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double t = std::abs(u(s, 0));
        const double x = 2.0 * u(s, 1);
        LawMoments m{u(s, 2), std::abs(u(s, 3)) + 0.1};
        if (g && g_x && !fd_ok(eval_g(x + e, m), eval_g(x - e, m), eval_g_x(x, m)))
            throw OutOfRange("g_x inconsistent with g at a sampled point");
        if (h && h_x && !fd_ok(eval_h(t, x + e), eval_h(t, x - e), eval_h_x(t, x)))
            throw OutOfRange("h_x inconsistent with h at a sampled point");
        for (const Coefficient* co : {&b, &sigma, &f}) {
            if (!co->value) continue;
            CtrlContext cp, cm;
            cp.t = cm.t = t;
            cp.x = x + e;
            cm.x = x - e;
            cp.law = cm.law = m;
            cp.w = cm.w = u(s, 4);
            cp.xi = cm.xi = std::abs(u(s, 5));
            CtrlContext c0 = cp;
            c0.x = x;
            if (co->dx && !fd_ok(co->value(cp), co->value(cm), co->dx(c0)))
                throw OutOfRange("coefficient dx inconsistent at a sampled point");
            CtrlContext wp = c0, wm = c0;
            wp.w += e;
            wm.w -= e;
            if (co->dw && !fd_ok(co->value(wp), co->value(wm), co->dw(c0)))
                throw OutOfRange("coefficient dw inconsistent at a sampled point");
            CtrlContext xp = c0, xm = c0;
            xp.xi += e;
            xm.xi -= e;
            if (co->dxi && !fd_ok(co->value(xp), co->value(xm), co->dxi(c0)))
                throw OutOfRange("coefficient dxi inconsistent at a sampled point");
            if (co->dmu) {
                CtrlContext mp = c0, mm = c0;
                mp.law.mu1 += e;
                mm.law.mu1 -= e;
                if (!fd_ok(co->value(mp), co->value(mm), co->dmu(c0)[0]))
                    throw OutOfRange("coefficient dmu1 inconsistent at a sampled point");
            }
        }
        if (g && g_mu) {
            LawMoments mp = m, mm = m;
            mp.mu1 += e;
            mm.mu1 -= e;
            if (!fd_ok(eval_g(x, mp), eval_g(x, mm), eval_g_mu(x, m)[0]))
                throw OutOfRange("g_mu inconsistent with g at a sampled point");
        }
    }
}

CoefficientSpec forward_spec(const ControlProblem& prob, const TimeGrid& grid) {
    CoefficientSpec spec;
    spec.alpha = prob.alpha;
    spec.lambda = prob.lambda;
    const double dt = grid.dt;
    // coefficients are copied into the closures so the returned spec does not
    // dangle if the problem goes out of scope
    auto wrap = [dt](Coefficient c) -> CoefFn {
        if (!c.value) return {};
        return [c = std::move(c), dt](const CoefContext& fc) {
            CtrlContext ctx;
            ctx.t = fc.t;
            ctx.x = fc.x;
            ctx.xi = fc.xi;
            ctx.law = fc.law;
            if (c.mem.active() && fc.x_seg) ctx.w = c.mem.apply(fc.x_seg->values, dt);
            if (c.lawseg.active() && !fc.law_seg.empty()) {
                std::vector<double> means(fc.law_seg.size());
                for (std::size_t j = 0; j < fc.law_seg.size(); ++j) means[j] = fc.law_seg[j].mu1;
                ctx.v = c.lawseg.apply(means, dt);
            }
            return c.value(ctx);
        };
    };
    spec.b = wrap(prob.b);
    spec.sigma = wrap(prob.sigma);
    return spec;
}

HamiltonianValue hamiltonian(const ControlProblem& prob, const CtrlContext& ctx, double p0,
                             double q0, const std::array<double, 2>& p1,
                             const std::array<double, 2>& beta_m) {
    HamiltonianValue v;
    v.h0 = prob.f.eval(ctx) + prob.b.eval(ctx) * p0 + prob.sigma.eval(ctx) * q0 +
           p1[0] * beta_m[0] + p1[1] * beta_m[1];
    v.singular_density = prob.eval_lambda(ctx.t) * p0 + prob.eval_h(ctx.t, ctx.x);
    return v;
}

namespace {

std::vector<LawMoments> law_by_step(const ParticleEnsemble& ens) {
    std::vector<LawMoments> out(ens.grid().n_steps + 1);
    for (std::size_t k = 0; k <= ens.grid().n_steps; ++k) out[k] = ens.law_moments(k);
    return out;
}

// per-(step, particle) coefficient context along a simulated run; laws holds
// the empirical moments per step (filled at least through k)
CtrlContext make_ctx(const ControlProblem& prob, const ParticleEnsemble& ens,
                     const ControlPaths& xi, std::size_t k, std::size_t i,
                     const Coefficient* coef, std::span<const LawMoments> laws) {
    const auto& g = ens.grid();
    CtrlContext ctx;
    ctx.t = g.time(k);
    ctx.x = ens.x(k, i);
    ctx.xi = xi.cum.at(std::min(k, xi.cum.n_times() - 1), i);
    ctx.law = laws[k];
    if (coef && coef->mem.active()) {
        const MemorySegment seg = memory_view(ens, i, k);
        ctx.w = coef->mem.apply(seg.values, g.dt);
    }
    if (coef && coef->lawseg.active()) {
        std::vector<double> means(g.delay_steps + 1);
        for (std::size_t j = 0; j <= g.delay_steps; ++j) {
            if (k >= j)
                means[j] = laws[k - j].mu1;
            else
                means[j] = prob.alpha[g.delay_steps - (j - k)];
        }
        ctx.v = coef->lawseg.apply(means, g.dt);
    }
    return ctx;
}

}  // namespace

AdjointPair solve_adjoints(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                           const ControlPaths& xi) {
    const auto& g = ensemble.grid();
    const std::size_t n = g.n_steps;
    const std::size_t d = g.delay_steps;
    const std::size_t N = ensemble.n_particles();

    AdjointPair adj;
    adj.p0 = GridProcess(g.n_extended(), N, 0.0);
    adj.q0 = GridProcess(g.n_extended(), N, 0.0);
    for (auto& p : adj.p1) p = GridProcess(g.n_extended(), N, 0.0);
    for (auto& q : adj.q1) q = GridProcess(g.n_extended(), N, 0.0);
    adj.drift_x = GridProcess(n, N, 0.0);

    const std::vector<LawMoments> laws = law_by_step(ensemble);
    const LawMoments lawT = laws[n];
    // accumulated backward targets: one regression per time, no compounding
    std::vector<double> u0(N), u1a(N), u1b(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double xT = ensemble.x(n, i);
        u0[i] = prob.eval_g_x(xT, lawT);
        const auto gm = prob.eval_g_mu(xT, lawT);
        u1a[i] = gm[0];
        u1b[i] = gm[1];
    }
    for (std::size_t j = n; j < g.n_extended(); ++j)
        for (std::size_t i = 0; i < N; ++i) {
            adj.p0.at(j, i) = u0[i];
            adj.p1[0].at(j, i) = u1a[i];
            adj.p1[1].at(j, i) = u1b[i];
        }

    std::vector<double> innov(N);
    const bool mem_b = prob.b.mem.active(), mem_s = prob.sigma.mem.active(),
               mem_f = prob.f.mem.active();
    const bool any_mem = mem_b || mem_s || mem_f;
    const bool ls_b = prob.b.lawseg.active(), ls_s = prob.sigma.lawseg.active(),
               ls_f = prob.f.lawseg.active();
    const bool any_ls = ls_b || ls_s || ls_f;

    for (std::size_t k = n; k-- > 0;) {
        const Regressor reg(ensemble.states(k), prob.regression);

        // E[accumulated target | F_k] before step-k additions and its
        // martingale density against this step's increment
        const std::vector<double> cont0 = reg.fit(u0);
        for (std::size_t i = 0; i < N; ++i)
            innov[i] = (u0[i] - cont0[i]) * ensemble.db(k, i) / g.dt;
        const std::vector<double> q0fit = reg.fit(innov);

        const std::vector<double> cont1a = reg.fit(u1a);
        const std::vector<double> cont1b = reg.fit(u1b);
        for (std::size_t i = 0; i < N; ++i)
            innov[i] = (u1a[i] - cont1a[i]) * ensemble.db(k, i) / g.dt;
        const std::vector<double> q1afit = reg.fit(innov);
        for (std::size_t i = 0; i < N; ++i)
            innov[i] = (u1b[i] - cont1b[i]) * ensemble.db(k, i) / g.dt;
        const std::vector<double> q1bfit = reg.fit(innov);

        for (std::size_t i = 0; i < N; ++i) {
            adj.q0.at(k, i) = q0fit[i];
            adj.q1[0].at(k, i) = q1afit[i];
            adj.q1[1].at(k, i) = q1bfit[i];
            // the r = 0 entry of the dual window needs p0(t_k); the
            // continuation is its explicit-in-time stand-in
            adj.p0.at(k, i) = cont0[i];
            adj.p1[0].at(k, i) = cont1a[i];
            adj.p1[1].at(k, i) = cont1b[i];
            // martingale control variate: E[q dB | F_j] = 0 for j <= k, so
            // stripping the fitted martingale part leaves every earlier
            // regression target unbiased with far less variance
            u0[i] -= q0fit[i] * ensemble.db(k, i);
            u1a[i] -= q1afit[i] * ensemble.db(k, i);
            u1b[i] -= q1bfit[i] * ensemble.db(k, i);
        }

        // step-k additions to the targets
        for (std::size_t i = 0; i < N; ++i) {
            CtrlContext cb = make_ctx(prob, ensemble, xi, k, i, &prob.b, laws);
            CtrlContext cs = make_ctx(prob, ensemble, xi, k, i, &prob.sigma, laws);
            CtrlContext cf = make_ctx(prob, ensemble, xi, k, i, &prob.f, laws);
            const double p0k = cont0[i];
            const double q0k = q0fit[i];

            double drift0 = prob.f.eval_dx(cf) + prob.b.eval_dx(cb) * p0k +
                            prob.sigma.eval_dx(cs) * q0k;
            if (any_mem) {
                // the x-bar gradient dualizes to <F, c^{t_k}> with
                // c(u) = (dcoef/dw)(u) x (p0, q0, 1) along the forward window;
                // each coefficient carries its own functional
                double dual = 0.0;
                // the Riesz lemma pairs against L0^2 processes, which vanish
                // beyond T: window entries past the horizon contribute zero
                if (mem_b) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.b, laws);
                        part[r] = prob.b.eval_dw(cu) * adj.p0.at(k + r, i);
                    }
                    dual += prob.b.mem.apply(part, g.dt);
                }
                if (mem_s) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.sigma, laws);
                        part[r] = prob.sigma.eval_dw(cu) * adj.q0.at(k + r, i);
                    }
                    dual += prob.sigma.mem.apply(part, g.dt);
                }
                if (mem_f) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.f, laws);
                        part[r] = prob.f.eval_dw(cu);
                    }
                    dual += prob.f.mem.apply(part, g.dt);
                }
                drift0 += dual;
            }
            adj.drift_x.at(k, i) = drift0;

            const double hx_next =
                prob.eval_h_x(g.time(k + 1), ensemble.x(k + 1, i)) * xi.increment(k, i);
            u0[i] += drift0 * g.dt + hx_next;

            // moment-coordinate adjoint drift
            auto dmu_f = prob.f.eval_dmu(cf);
            auto dmu_b = prob.b.eval_dmu(cb);
            auto dmu_s = prob.sigma.eval_dmu(cs);
            double d1a = dmu_f[0] + dmu_b[0] * p0k + dmu_s[0] * q0k;
            double d1b = dmu_f[1] + dmu_b[1] * p0k + dmu_s[1] * q0k;
            if (any_ls) {
                // law-segment feature reads the mean segment only, so the dual
                // lands in the mu1 coordinate
                double dual1 = 0.0;
                if (ls_b) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.b, laws);
                        part[r] = prob.b.eval_dv(cu) * adj.p0.at(k + r, i);
                    }
                    dual1 += prob.b.lawseg.apply(part, g.dt);
                }
                if (ls_s) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.sigma, laws);
                        part[r] = prob.sigma.eval_dv(cu) * adj.q0.at(k + r, i);
                    }
                    dual1 += prob.sigma.lawseg.apply(part, g.dt);
                }
                if (ls_f) {
                    std::vector<double> part(d + 1, 0.0);
                    for (std::size_t r = 0; r <= d && k + r <= n; ++r) {
                        CtrlContext cu = make_ctx(prob, ensemble, xi, k + r, i, &prob.f, laws);
                        part[r] = prob.f.eval_dv(cu);
                    }
                    dual1 += prob.f.lawseg.apply(part, g.dt);
                }
                d1a += dual1;
            }
            u1a[i] += d1a * g.dt;
            u1b[i] += d1b * g.dt;
        }
        // refit after the additions so p(t_k) = E[target | F_k]
        const std::vector<double> p0fit = reg.fit(u0);
        const std::vector<double> p1afit = reg.fit(u1a);
        const std::vector<double> p1bfit = reg.fit(u1b);
        for (std::size_t i = 0; i < N; ++i) {
            adj.p0.at(k, i) = p0fit[i];
            adj.p1[0].at(k, i) = p1afit[i];
            adj.p1[1].at(k, i) = p1bfit[i];
        }
    }
    return adj;
}

std::vector<double> j_value(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                            const ControlPaths& xi) {
    const auto& g = ensemble.grid();
    const std::size_t n = g.n_steps;
    const std::size_t N = ensemble.n_particles();
    std::vector<double> out(N, 0.0);
    const std::vector<LawMoments> laws = law_by_step(ensemble);
    const LawMoments lawT = laws[n];
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        if (prob.f.value)
            for (std::size_t k = 0; k < n; ++k)
                acc += prob.f.eval(make_ctx(prob, ensemble, xi, k, i, &prob.f, laws)) * g.dt;
        acc += prob.eval_g(ensemble.x(n, i), lawT);
        // Stieltjes masses pair with the post-jump state (right continuity)
        acc += prob.eval_h(0.0, ensemble.x(0, i)) * xi.initial_jump(i);
        for (std::size_t k = 0; k < n; ++k)
            acc += prob.eval_h(g.time(k + 1), ensemble.x(k + 1, i)) * xi.increment(k, i);
        out[i] = acc;
    }
    return out;
}

DerivativeReport directional_derivative(const ControlProblem& prob,
                                        const ParticleEnsemble& ensemble,
                                        const ControlPaths& xi, const Perturbation& eta,
                                        const AdjointPair& adj, const TimeGrid& grid,
                                        std::uint64_t seed,
                                        const std::vector<double>& fd_steps) {
    check_admissible(xi, eta);
    const std::size_t n = grid.n_steps;
    const std::size_t N = ensemble.n_particles();

    std::vector<double> an(N, 0.0);
    const std::vector<LawMoments> laws = law_by_step(ensemble);
    for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        // dt part: dH0/dxi weighted by eta(t)
        for (std::size_t k = 0; k < n; ++k) {
            CtrlContext cb = make_ctx(prob, ensemble, xi, k, i, &prob.b, laws);
            CtrlContext cs = make_ctx(prob, ensemble, xi, k, i, &prob.sigma, laws);
            CtrlContext cf = make_ctx(prob, ensemble, xi, k, i, &prob.f, laws);
            const double dh0 = prob.f.eval_dxi(cf) + prob.b.eval_dxi(cb) * adj.p0.at(k, i) +
                               prob.sigma.eval_dxi(cs) * adj.q0.at(k, i);
            if (dh0 != 0.0) acc += dh0 * eta.cum.at(k, i) * grid.dt;
        }
        // d eta part: (lambda p0 + h) against eta increments, post-jump pairing
        acc += (prob.eval_lambda(0.0) * adj.p0.at(0, i) + prob.eval_h(0.0, ensemble.x(0, i))) *
               eta.cum.at(0, i);
        for (std::size_t k = 0; k < n; ++k) {
            const double t1 = grid.time(k + 1);
            const double dens =
                prob.eval_lambda(t1) * adj.p0.at(k + 1, i) + prob.eval_h(t1, ensemble.x(k + 1, i));
            acc += dens * (eta.cum.at(k + 1, i) - eta.cum.at(k, i));
        }
        an[i] = acc;
    }

    DerivativeReport rep;
    rep.analytic = mean_of(an);
    rep.analytic_se = stderr_of(an);

    const CoefficientSpec spec = forward_spec(prob, grid);
    const std::vector<double> j_base = j_value(prob, ensemble, xi);
    for (double a : fd_steps) {
        ControlPaths pert;
        pert.cum = GridProcess(n + 1, N);
        for (std::size_t k = 0; k <= n; ++k)
            for (std::size_t i = 0; i < N; ++i)
                pert.cum.at(k, i) = xi.cum.at(k, i) + a * eta.cum.at(k, i);
        const ParticleEnsemble ens2 = simulate(spec, pert, grid, N, seed);
        const std::vector<double> j_pert = j_value(prob, ens2, pert);
        std::vector<double> fd(N), diff(N);
        for (std::size_t i = 0; i < N; ++i) {
            fd[i] = (j_pert[i] - j_base[i]) / a;
            diff[i] = an[i] - fd[i];
        }
        rep.fd[a] = mean_of(fd);
        rep.fd_se[a] = stderr_of(diff);
    }
    return rep;
}

NecessaryReport check_necessary(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                                const ControlPaths& xi, const AdjointPair& adj) {
    const auto& g = ensemble.grid();
    const std::size_t n = g.n_steps;
    const std::size_t N = ensemble.n_particles();

    NecessaryReport rep;
    rep.mean_by_time.resize(n + 1);
    rep.se_by_time.resize(n + 1);
    GridProcess phi(n + 1, N);
    for (std::size_t k = 0; k <= n; ++k) {
        for (std::size_t i = 0; i < N; ++i)
            phi.at(k, i) = prob.eval_lambda(g.time(k)) * adj.p0.at(k, i) +
                           prob.eval_h(g.time(k), ensemble.x(k, i));
        rep.mean_by_time[k] = mean_of(phi.row(k));
        rep.se_by_time[k] = stderr_of(phi.row(k));
    }
    std::size_t argmax = 0;
    for (std::size_t k = 1; k <= n; ++k)
        if (rep.mean_by_time[k] > rep.mean_by_time[argmax]) argmax = k;
    rep.max_excursion = rep.mean_by_time[argmax];
    rep.max_excursion_se = rep.se_by_time[argmax];

    // complementarity with regression-conditioned density, post-jump pairing
    std::vector<double> comp(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) comp[i] = phi.at(0, i) * xi.initial_jump(i);
    for (std::size_t k = 0; k < n; ++k) {
        const Regressor reg(ensemble.states(k + 1), prob.regression);
        const std::vector<double> phat = reg.fit(phi.row(k + 1));
        for (std::size_t i = 0; i < N; ++i) comp[i] += phat[i] * xi.increment(k, i);
    }
    rep.complementarity = mean_of(comp);
    rep.complementarity_se = stderr_of(comp);
    return rep;
}

SufficientReport check_sufficient(const ControlProblem& prob, const ParticleEnsemble& ensemble,
                                  const ControlPaths& xi, const AdjointPair& adj,
                                  std::uint64_t seed, std::size_t n_probes) {
    const auto& g = ensemble.grid();
    const std::size_t n = g.n_steps;
    const std::size_t N = ensemble.n_particles();

    // state and adjoint scales for probe placement
    double xscale = 1.0;
    for (std::size_t i = 0; i < N; ++i) xscale = std::max(xscale, std::abs(ensemble.x(n, i)));

    double max_curv = -1e300;
    const double e = 1e-3 * xscale;
    const double tol = 1e-6 * std::max(1.0, xscale * xscale);
    for (std::size_t p = 0; p < n_probes; ++p) {
        const double ux = 2.0 * RngStream::uniform(RngStream::key(seed, p, 0, 11)) - 1.0;
        const double um = 2.0 * RngStream::uniform(RngStream::key(seed, p, 1, 11)) - 1.0;
        const double x = ux * xscale;
        LawMoments m{um * xscale, std::abs(um) * xscale * xscale};
        // g concavity in x and in the moment coordinates
        const double gxx =
            (prob.eval_g(x + e, m) - 2.0 * prob.eval_g(x, m) + prob.eval_g(x - e, m)) / (e * e);
        max_curv = std::max(max_curv, gxx);
        LawMoments mp = m, mm = m;
        mp.mu1 += e;
        mm.mu1 -= e;
        const double gmm =
            (prob.eval_g(x, mp) - 2.0 * prob.eval_g(x, m) + prob.eval_g(x, mm)) / (e * e);
        max_curv = std::max(max_curv, gmm);
        // Hamiltonian density in (x, xi) at frozen adjoint samples
        const std::size_t k = p % n;
        const std::size_t i = p % N;
        const double p0 = adj.p0.at(k, i);
        const double q0 = adj.q0.at(k, i);
        auto h0_at = [&](double xx, double xixi) {
            CtrlContext c;
            c.t = g.time(k);
            c.x = xx;
            c.xi = xixi;
            c.law = m;
            return prob.f.eval(c) + prob.b.eval(c) * p0 + prob.sigma.eval(c) * q0;
        };
        const double xi0 = xi.cum.at(k, i);
        const double hxx = (h0_at(x + e, xi0) - 2.0 * h0_at(x, xi0) + h0_at(x - e, xi0)) / (e * e);
        const double hxixi =
            (h0_at(x, xi0 + e) - 2.0 * h0_at(x, xi0) + h0_at(x, xi0 - e)) / (e * e);
        max_curv = std::max({max_curv, hxx, hxixi});
        // singular density lambda p0 + h(t, x) in x
        const double sxx = (prob.eval_h(g.time(k), x + e) - 2.0 * prob.eval_h(g.time(k), x) +
                            prob.eval_h(g.time(k), x - e)) /
                           (e * e);
        max_curv = std::max(max_curv, sxx);
    }
    if (max_curv > tol)
        throw NotConcave("sampled curvature " + std::to_string(max_curv) +
                         " exceeds tolerance; the sufficient theorem does not apply");

    SufficientReport rep;
    rep.max_curvature = max_curv;
    rep.vi = check_necessary(prob, ensemble, xi, adj);
    return rep;
}

ControlledRun simulate_threshold(const ControlProblem& prob, double level, const TimeGrid& grid,
                                 std::size_t n_particles, std::uint64_t seed) {
    const double lam = prob.eval_lambda(0.0);
    for (std::size_t k = 0; k <= grid.n_steps; ++k) {
        const double l = prob.eval_lambda(grid.time(k));
        if (!(l < 0.0) || std::abs(l - lam) > 1e-12)
            throw LambdaNotConstantNegative("threshold policy needs constant lambda < 0");
    }
    const double lam0 = -lam;
    if (prob.alpha.size() != grid.delay_steps + 1)
        throw OutOfRange("simulate_threshold: alpha must have delay_steps+1 values");

    ControlledRun run;
    run.ens = ParticleEnsemble(grid, n_particles);
    run.xi.cum = GridProcess(grid.n_steps + 1, n_particles, 0.0);
    const std::size_t d = grid.delay_steps;
    const double sq = std::sqrt(grid.dt);

    for (std::size_t i = 0; i < n_particles; ++i) {
        for (std::size_t j = 0; j <= d; ++j) run.ens.x_ext(j, i) = prob.alpha[j];
        const double push0 = std::max(prob.alpha[d] - level, 0.0);
        run.xi.cum.at(0, i) = push0 / lam0;
        run.ens.x_ext(d, i) = prob.alpha[d] - push0;
    }
    for (std::size_t k = 0; k < grid.n_steps; ++k)
        for (std::size_t i = 0; i < n_particles; ++i)
            run.ens.db(k, i) = sq * RngStream::normal(seed, i, k, RngStream::kBrownian);

    std::vector<LawMoments> laws(grid.n_steps + 1);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        laws[k] = run.ens.law_moments(k);
        for (std::size_t i = 0; i < n_particles; ++i) {
            CtrlContext cb = make_ctx(prob, run.ens, run.xi, k, i, &prob.b, laws);
            CtrlContext cs = make_ctx(prob, run.ens, run.xi, k, i, &prob.sigma, laws);
            const double drift = prob.b.eval(cb);
            const double diff = prob.sigma.eval(cs);
            double xt = run.ens.x(k, i) + drift * grid.dt + diff * run.ens.db(k, i);
            const double push = std::max(xt - level, 0.0);
            run.ens.x(k + 1, i) = xt - push;
            run.xi.cum.at(k + 1, i) = run.xi.cum.at(k, i) + push / lam0;
            if (!std::isfinite(xt)) throw NonFinite("simulate_threshold: blow-up");
        }
    }
    return run;
}

ThresholdSearch optimize_threshold(const ControlProblem& prob, std::vector<double> levels,
                                   const TimeGrid& grid, std::size_t n_particles,
                                   std::uint64_t seed, bool refine) {
    if (levels.empty()) throw OutOfRange("optimize_threshold: no levels");
    std::sort(levels.begin(), levels.end());
    ThresholdSearch out;
    out.levels = levels;

    auto j_at = [&](double a) {
        const ControlledRun run = simulate_threshold(prob, a, grid, n_particles, seed);
        return j_value(prob, run.ens, run.xi);
    };

    std::size_t best = 0;
    double best_j = -1e300;
    for (std::size_t idx = 0; idx < levels.size(); ++idx) {
        const std::vector<double> js = j_at(levels[idx]);
        out.j_mean.push_back(mean_of(js));
        out.j_se.push_back(stderr_of(js));
        if (out.j_mean.back() > best_j) {
            best_j = out.j_mean.back();
            best = idx;
        }
    }
    out.best_level = levels[best];

    if (refine && levels.size() >= 2) {
        // golden-section on the realized common-random-number J(a)
        double lo = levels[best > 0 ? best - 1 : 0];
        double hi = levels[std::min(best + 1, levels.size() - 1)];
        if (hi - lo > 1e-12) {
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
            double fa = mean_of(j_at(a)), fb = mean_of(j_at(b));
            for (int it = 0; it < 40 && hi - lo > 1e-4; ++it) {
                if (fa > fb) {
                    hi = b;
                    b = a;
                    fb = fa;
                    a = hi - gr * (hi - lo);
                    fa = mean_of(j_at(a));
                } else {
                    lo = a;
                    a = b;
                    fa = fb;
                    b = lo + gr * (hi - lo);
                    fb = mean_of(j_at(b));
                }
            }
            const double mid = 0.5 * (lo + hi);
            if (mean_of(j_at(mid)) >= best_j) out.best_level = mid;
        }
    }
    return out;
}

Connection assemble_stopping_connection(const ControlProblem& prob,
                                        const ParticleEnsemble& ensemble,
                                        const ControlPaths& xi_hat, const AdjointPair& adj) {
    const auto& g = ensemble.grid();
    const std::size_t n = g.n_steps;
    const std::size_t N = ensemble.n_particles();
    const double lam = prob.eval_lambda(0.0);
    for (std::size_t k = 0; k <= n; ++k) {
        const double l = prob.eval_lambda(g.time(k));
        if (!(l < 0.0) || std::abs(l - lam) > 1e-12)
            throw LambdaNotConstantNegative("connection requires constant lambda < 0");
    }
    const double lam0 = -lam;

    Connection conn;
    conn.barrier.S = GridProcess(n + 1, N);
    conn.barrier.R.resize(N);
    const LawMoments lawT = ensemble.law_moments(n);
    for (std::size_t k = 0; k <= n; ++k)
        for (std::size_t i = 0; i < N; ++i)
            conn.barrier.S.at(k, i) = prob.eval_h(g.time(k), ensemble.x(k, i)) / lam0;
    for (std::size_t i = 0; i < N; ++i)
        conn.barrier.R[i] = prob.eval_g_x(ensemble.x(n, i), lawT);

    conn.assembled.Y = adj.p0;
    conn.assembled.Z = adj.q0;
    conn.assembled.K = GridProcess(n + 1, N, 0.0);
    conn.assembled.F_used = adj.drift_x;
    for (std::size_t i = 0; i < N; ++i) {
        double acc = prob.eval_h_x(0.0, ensemble.x(0, i)) * xi_hat.initial_jump(i);
        conn.assembled.K.at(0, i) = acc;
        for (std::size_t k = 0; k < n; ++k) {
            acc += prob.eval_h_x(g.time(k + 1), ensemble.x(k + 1, i)) * xi_hat.increment(k, i);
            conn.assembled.K.at(k + 1, i) = acc;
        }
    }
    conn.first_move.assign(N, n);
    for (std::size_t i = 0; i < N; ++i) {
        if (xi_hat.cum.at(0, i) > 0.0) {
            conn.first_move[i] = 0;
            continue;
        }
        for (std::size_t k = 1; k <= n; ++k)
            if (xi_hat.cum.at(k, i) > xi_hat.cum.at(k - 1, i)) {
                conn.first_move[i] = k;
                break;
            }
    }
    return conn;
}

ConnectionReport connection_report(const Connection& conn, const ControlProblem& prob,
                                   const ParticleEnsemble& ensemble, const ControlPaths& xi,
                                   double band) {
    (void)prob;
    (void)xi;
    const std::size_t N = ensemble.n_particles();
    const std::size_t n = ensemble.grid().n_steps;
    ConnectionReport rep;

    rep.min_gap = 1e300;
    rep.per_time_mean_gap_ok = true;
    std::size_t below = 0;
    std::vector<double> gaps(N);
    for (std::size_t k = 0; k <= n; ++k) {
        for (std::size_t i = 0; i < N; ++i) {
            gaps[i] = conn.assembled.Y.at(k, i) - conn.barrier.S.at(k, i);
            rep.min_gap = std::min(rep.min_gap, gaps[i]);
            if (gaps[i] < -band) ++below;
        }
        const double m = mean_of(gaps);
        const double se = stderr_of(gaps);
        if (m < -3.0 * se) rep.per_time_mean_gap_ok = false;
    }
    rep.frac_below_band = static_cast<double>(below) / static_cast<double>(N * (n + 1));

    std::vector<double> sk(N, 0.0);
    rep.k_nondecreasing = true;
    for (std::size_t i = 0; i < N; ++i) {
        double prev = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            const double dk = conn.assembled.K.at(k, i) - prev;
            prev = conn.assembled.K.at(k, i);
            if (dk < -1e-12) rep.k_nondecreasing = false;
            sk[i] += (conn.assembled.Y.at(k, i) - conn.barrier.S.at(k, i)) * dk;
        }
    }
    rep.skorokhod = mean_of(sk);
    rep.skorokhod_se = stderr_of(sk);

    const StoppingTime tk = k_increase_time(conn.assembled, 0);
    const StoppingTime ty = hitting_time(conn.assembled, conn.barrier, 0);
    std::size_t agree_k = 0, agree_y = 0;
    for (std::size_t i = 0; i < N; ++i) {
        if (tk.tau[i] == conn.first_move[i]) ++agree_k;
        if (ty.tau[i] == conn.first_move[i]) ++agree_y;
    }
    rep.tau_k_agreement = static_cast<double>(agree_k) / static_cast<double>(N);
    rep.tau_y_agreement = static_cast<double>(agree_y) / static_cast<double>(N);
    return rep;
}

}  // namespace mfsc
