#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mfsc/control.hpp"
#include "mfsc/registry.hpp"
#include "mfsc/rng.hpp"
#include "oracles.hpp"

using namespace mfsc;

namespace {

ControlPaths zero_control(const TimeGrid& g, std::size_t N) {
    ControlPaths xi;
    xi.cum = GridProcess(g.n_steps + 1, N, 0.0);
    return xi;
}

}  // namespace

TEST_CASE("dual operator: averaging and evaluation") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.2);
    std::vector<double> p(g.n_extended(), 1.0);

    MemoryFunctional avg;
    avg.kind = MemoryFunctional::Kind::average;
    avg.weights.assign(g.delay_steps + 1, 1.0);
    CHECK(dual_operator(avg, p, 10, g) == doctest::Approx(g.delta()));

    // evaluation at t0 returns p(t + t0)
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::sin(0.1 * static_cast<double>(j));
    MemoryFunctional ev;
    ev.kind = MemoryFunctional::Kind::eval;
    ev.t0 = 0.15;
    CHECK(dual_operator(ev, p, 30, g) == doctest::Approx(p[45]));

    ev.t0 = 0.5;  // beyond delta
    CHECK_THROWS_AS(dual_operator(ev, p, 30, g), OffsetOutOfRange);
}

TEST_CASE("Riesz identity for the averaging functional") {
    // int_0^T <G_xbar(t), Y_t> dt = int_0^T G*(t) Y(t) dt with
    // G_xbar(t) = <F, .> p(t), Y supported in [0, T]
    const TimeGrid g = make_grid(1.0, 0.005, 0.2);
    const std::size_t n = g.n_steps, d = g.delay_steps;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        std::vector<double> p(g.n_extended()), y(n + 1 + d, 0.0);
        // smooth-ish random paths; Y vanishes outside [0, T]
        const double a1 = RngStream::uniform(RngStream::key(77, trial, 0, 0)) * 3.0;
        const double a2 = RngStream::uniform(RngStream::key(77, trial, 1, 0)) * 3.0;
        const double b1 = RngStream::uniform(RngStream::key(77, trial, 2, 0)) * 2.0 - 1.0;
        // p lives in L0^2: it vanishes beyond T
        for (std::size_t k = 0; k < g.n_extended(); ++k)
            p[k] = k <= n ? std::cos(a1 * g.time(k)) + b1 : 0.0;
        std::vector<double> yv(n + 1, 0.0);
        for (std::size_t k = 0; k <= n; ++k) yv[k] = std::sin(a2 * g.time(k));

        MemoryFunctional avg;
        avg.kind = MemoryFunctional::Kind::average;
        avg.weights.resize(d + 1);
        for (std::size_t j = 0; j <= d; ++j)
            avg.weights[j] = 0.5 + RngStream::uniform(RngStream::key(77, trial, 3 + j, 0));

        // LHS: trapezoid over t of <F, Y_t> p(t) with the backward window of Y
        auto backward_window = [&](std::size_t k) {
            std::vector<double> seg(d + 1, 0.0);
            for (std::size_t j = 0; j <= d; ++j)
                seg[j] = (k >= j) ? yv[k - j] : 0.0;  // Y = 0 before 0
            return seg;
        };
        double lhs = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            double v = avg.apply(backward_window(k), g.dt) * p[k];
            if (k == 0 || k == n) v *= 0.5;
            lhs += v;
        }
        lhs *= g.dt;
        // RHS: trapezoid of <F, p^t> Y(t)
        double rhs = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            double v = dual_operator(avg, p, k, g) * yv[k];
            if (k == 0 || k == n) v *= 0.5;
            rhs += v;
        }
        rhs *= g.dt;
        CHECK(std::abs(lhs - rhs) <= 3.0 * g.dt);
    }
}

TEST_CASE("hamiltonian assembly") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    ControlProblem prob = registry::control_problem("monotone_follower_flat", g, {});
    CtrlContext ctx;
    ctx.t = 0.3;
    ctx.x = 0.7;

    // all coefficients zero: only the singular density survives
    ControlProblem zero;
    zero.lambda = [](double) { return -2.0; };
    zero.h = [](double, double x) { return 0.5 * x; };
    const HamiltonianValue hv0 = hamiltonian(zero, ctx, 1.5, 0.0, {0.0, 0.0}, {0.0, 0.0});
    CHECK(hv0.h0 == 0.0);
    CHECK(hv0.singular_density == doctest::Approx(-2.0 * 1.5 + 0.35));

    // f=1, b=2, sigma=3 with p0=q0=1: h0 = 6
    ControlProblem lin;
    lin.f.value = [](const CtrlContext&) { return 1.0; };
    lin.b.value = [](const CtrlContext&) { return 2.0; };
    lin.sigma.value = [](const CtrlContext&) { return 3.0; };
    const HamiltonianValue hv1 = hamiltonian(lin, ctx, 1.0, 1.0, {0.0, 0.0}, {0.0, 0.0});
    CHECK(hv1.h0 == doctest::Approx(6.0));

    // <p1, beta(m)> with p1 = (1, 0) and beta from the unit-drift law derivative
    const ParticleEnsemble ens =
        simulate(registry::coefficients("drift_unit", g, {}), SingularControl{}, g, 64, 1);
    const auto beta = law_derivative(ens, 50, 1);
    const HamiltonianValue hv2 = hamiltonian(lin, ctx, 0.0, 0.0, {1.0, 0.0}, {beta[0], beta[1]});
    CHECK(hv2.h0 - 1.0 == doctest::Approx(beta[0]).epsilon(1e-12));
    CHECK(beta[0] == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("adjoints: constant terminal gradient, zero driver") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 64;
    ControlProblem prob;
    prob.alpha = {0.0};
    prob.lambda = [](double) { return -1.0; };
    prob.g = [](double x, LawMoments) { return x; };
    prob.g_x = [](double, LawMoments) { return 1.0; };
    const ParticleEnsemble ens =
        simulate(forward_spec(prob, g), zero_control(g, N), g, N, 2);
    const AdjointPair adj = solve_adjoints(prob, ens, zero_control(g, N));
    for (std::size_t k = 0; k <= g.n_steps; k += 10)
        for (std::size_t i = 0; i < N; i += 7) {
            CHECK(adj.p0.at(k, i) == doctest::Approx(1.0));
            CHECK(adj.q0.at(k, i) == doctest::Approx(0.0));
            CHECK(adj.p1[0].at(k, i) == doctest::Approx(0.0));
        }
}

TEST_CASE("adjoints recover the martingale -2X under Brownian dynamics") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 1 << 12;
    ControlProblem prob = registry::control_problem("monotone_follower_flat", g, {});
    const ParticleEnsemble ens =
        simulate(forward_spec(prob, g), zero_control(g, N), g, N, 33);
    const AdjointPair adj = solve_adjoints(prob, ens, zero_control(g, N));
    for (std::size_t k : {std::size_t{25}, std::size_t{50}, std::size_t{75}}) {
        // OLS slope of p0 on X
        double sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double x = ens.x(k, i), y = adj.p0.at(k, i);
            sx += x;
            sxx += x * x;
            sy += y;
            sxy += x * y;
        }
        const double nn = static_cast<double>(N);
        const double slope = (sxy - sx * sy / nn) / (sxx - sx * sx / nn);
        CHECK(slope == doctest::Approx(-2.0).epsilon(0.02));
    }
}

TEST_CASE("moment adjoint is constant when g depends only on the mean") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 256;
    ControlProblem prob;
    prob.alpha = {0.0};
    prob.lambda = [](double) { return -1.0; };
    prob.sigma.value = [](const CtrlContext&) { return 1.0; };
    prob.g = [](double, LawMoments m) { return 2.0 * m.mu1; };
    prob.g_mu = [](double, LawMoments) { return std::array<double, 2>{2.0, 0.0}; };
    const ParticleEnsemble ens =
        simulate(forward_spec(prob, g), zero_control(g, N), g, N, 3);
    const AdjointPair adj = solve_adjoints(prob, ens, zero_control(g, N));
    for (std::size_t k = 0; k <= g.n_steps; k += 9)
        for (std::size_t i = 0; i < N; i += 31) {
            CHECK(adj.p1[0].at(k, i) == doctest::Approx(2.0));
            CHECK(adj.p1[1].at(k, i) == doctest::Approx(0.0));
        }
}

TEST_CASE("adjoint with delayed drift matches the advanced method-of-steps oracle") {
    // b = <eval at delta, x-bar>: the p0 equation becomes the advanced ODE
    // p'(t) = -E[p(t+delta)|F_t] with p(T) = 1, solved in closed form by the
    // same oracle as the advanced BSDE
    const TimeGrid g = make_grid(1.0, 0.01, 0.5);
    const std::size_t N = 16;
    ControlProblem prob;
    prob.alpha.assign(g.delay_steps + 1, 0.0);
    prob.lambda = [](double) { return -1.0; };
    prob.g = [](double x, LawMoments) { return x; };
    prob.g_x = [](double, LawMoments) { return 1.0; };
    prob.b.mem.kind = MemoryFunctional::Kind::eval;
    prob.b.mem.t0 = 0.5;
    prob.b.value = [](const CtrlContext& c) { return c.w; };
    prob.b.dw = [](const CtrlContext&) { return 1.0; };
    const ParticleEnsemble ens =
        simulate(forward_spec(prob, g), zero_control(g, N), g, N, 4);
    const AdjointPair adj = solve_adjoints(prob, ens, zero_control(g, N));
    // fundamental solution of v' = v(. - delta), v(t) = 1: the sensitivity of
    // X(T) to an impulse at t; equals 1 on [T - delta, T] and 1 + (T-delta-t)
    // one delay-length earlier (T = 1, delta = 0.5)
    CHECK(std::abs(adj.p0.at(50, 0) - 1.0) <= 5.0 * g.dt);
    CHECK(std::abs(adj.p0.at(75, 0) - 1.0) <= 5.0 * g.dt);
    CHECK(std::abs(adj.p0.at(0, 0) - 1.5) <= 5.0 * g.dt);
    CHECK(std::abs(adj.p0.at(25, 0) - 1.25) <= 5.0 * g.dt);

    // cross-check the derivative representation by finite differences:
    // impulse perturbation at 0.2
    prob.h = [](double, double) { return -0.3; };
    Perturbation eta;
    eta.cum = GridProcess(g.n_steps + 1, N, 0.0);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i)
            eta.cum.at(k, i) = g.time(k) >= 0.2 ? 1.0 : 0.0;
    const DerivativeReport dr =
        directional_derivative(prob, ens, zero_control(g, N), eta, adj, g, 4);
    for (const auto& [a, fd] : dr.fd)
        CHECK(std::abs(dr.analytic - fd) <= std::max(0.02 * std::abs(fd), 3.0 * dr.fd_se.at(a)));
}

TEST_CASE("directional derivative vanishes for eta = 0 and for the null-density problem") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 128;
    // lambda = -l0, h = l0, g(x) = x so that lambda p0 + h = l0 (1 - p0) = 0
    ControlProblem prob;
    prob.alpha = {0.0};
    prob.lambda = [](double) { return -2.0; };
    prob.h = [](double, double) { return 2.0; };
    prob.sigma.value = [](const CtrlContext&) { return 1.0; };
    prob.g = [](double x, LawMoments) { return x; };
    prob.g_x = [](double, LawMoments) { return 1.0; };
    ControlPaths xi = zero_control(g, N);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i) xi.cum.at(k, i) = 0.2 * g.time(k);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, N, 5);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);

    Perturbation zero;
    zero.cum = GridProcess(g.n_steps + 1, N, 0.0);
    const DerivativeReport r0 = directional_derivative(prob, ens, xi, zero, adj, g, 5);
    CHECK(r0.analytic == 0.0);

    Perturbation eta;
    eta.cum = GridProcess(g.n_steps + 1, N, 0.0);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i)
            eta.cum.at(k, i) = g.time(k) >= 0.4 ? 0.7 : 0.0;
    const DerivativeReport r1 = directional_derivative(prob, ens, xi, eta, adj, g, 5);
    CHECK(std::abs(r1.analytic) <= 1e-9);
    for (const auto& [a, fd] : r1.fd) CHECK(std::abs(fd) <= 1e-9);
}

TEST_CASE("directional derivative matches finite differences on the flat-cost follower") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 2048;
    ControlProblem prob = registry::control_problem("monotone_follower_flat", g, {});
    ControlPaths xi = zero_control(g, N);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i) xi.cum.at(k, i) = 0.4 * g.time(k);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, N, 6);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);

    for (int which = 1; which <= 3; ++which) {
        Perturbation eta;
        eta.cum = GridProcess(g.n_steps + 1, N, 0.0);
        for (std::size_t k = 0; k <= g.n_steps; ++k)
            for (std::size_t i = 0; i < N; ++i) {
                if (which == 1)
                    eta.cum.at(k, i) = g.time(k) >= 0.3 ? 1.0 : 0.0;
                else
                    eta.cum.at(k, i) = (which == 2 ? 1.0 : -1.0) * xi.cum.at(k, i);
            }
        const DerivativeReport rep = directional_derivative(prob, ens, xi, eta, adj, g, 6);
        for (const auto& [a, fd] : rep.fd) {
            const double gate = std::max(3.0 * rep.fd_se.at(a), 0.05 * std::abs(fd));
            CHECK(std::abs(rep.analytic - fd) <= gate);
        }
    }
}

TEST_CASE("inadmissible perturbations are rejected") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    ControlPaths xi = zero_control(g, 4);
    Perturbation eta;
    eta.cum = GridProcess(g.n_steps + 1, 4, 0.0);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < 4; ++i) eta.cum.at(k, i) = -g.time(k);
    eta.eps = 0.5;  // xi + a eta decreases
    CHECK_THROWS_AS(check_admissible(xi, eta), InadmissiblePerturbation);
}

TEST_CASE("necessary conditions pass trivially when harvesting never pays") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 1024;
    ControlProblem prob = registry::control_problem("harvest_never", g, {});
    const ControlPaths xi = zero_control(g, N);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, N, 7);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);
    const NecessaryReport rep = check_necessary(prob, ens, xi, adj);
    CHECK(rep.complementarity == 0.0);
    CHECK(rep.max_excursion < 0.0);
}

TEST_CASE("concavity probes accept concave data and reject convex g") {
    const TimeGrid g = make_grid(0.5, 0.01, 0.0);
    const std::size_t N = 256;
    ControlProblem prob = registry::control_problem("monotone_follower_flat", g, {});
    const ControlPaths xi = zero_control(g, N);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, N, 8);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);
    const SufficientReport rep = check_sufficient(prob, ens, xi, adj);
    CHECK(rep.max_curvature <= 1e-6);

    ControlProblem linear = prob;
    linear.g = [](double x, LawMoments) { return 0.3 * x; };
    linear.g_x = [](double, LawMoments) { return 0.3; };
    CHECK_NOTHROW(check_sufficient(linear, ens, xi, solve_adjoints(linear, ens, xi)));

    ControlProblem convex = prob;
    convex.g = [](double x, LawMoments) { return x * x; };
    convex.g_x = [](double x, LawMoments) { return 2.0 * x; };
    CHECK_THROWS_AS(check_sufficient(convex, ens, xi, adj), NotConcave);
}

TEST_CASE("threshold search corners") {
    const TimeGrid g = make_grid(0.5, 0.01, 0.0);
    const std::size_t N = 512;

    // costless harvesting toward a bequest target below every level: the
    // tightest level is forced
    ControlProblem free;
    free.alpha = {2.0};
    free.lambda = [](double) { return -1.0; };
    free.sigma.value = [](const CtrlContext&) { return 1.0; };
    free.g = [](double x, LawMoments) { return -(x + 1.0) * (x + 1.0); };
    free.g_x = [](double x, LawMoments) { return -2.0 * (x + 1.0); };
    const ThresholdSearch s1 =
        optimize_threshold(free, {0.0, 0.5, 1.0, 1.5}, g, N, 9, false);
    CHECK(s1.best_level == doctest::Approx(0.0));

    // harvesting very costly with no bequest: never harvest, loosest level wins
    ControlProblem costly;
    costly.alpha = {0.0};
    costly.lambda = [](double) { return -1.0; };
    costly.sigma.value = [](const CtrlContext&) { return 1.0; };
    costly.h = [](double, double) { return -50.0; };
    const ThresholdSearch s2 =
        optimize_threshold(costly, {0.2, 0.6, 1.0, 1.4}, g, N, 10, false);
    CHECK(s2.best_level == doctest::Approx(1.4));
}

TEST_CASE("lambda must be constant negative for policies and the connection") {
    const TimeGrid g = make_grid(0.5, 0.01, 0.0);
    ControlProblem prob = registry::control_problem("monotone_follower_flat", g, {});
    prob.lambda = [](double) { return 1.0; };
    CHECK_THROWS_AS(simulate_threshold(prob, 0.5, g, 8, 1), LambdaNotConstantNegative);
    const ControlPaths xi = zero_control(g, 8);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, 8, 1);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);
    CHECK_THROWS_AS(assemble_stopping_connection(prob, ens, xi, adj),
                    LambdaNotConstantNegative);
}

TEST_CASE("connection with xi = 0: K = 0, barrier never touched, tau = T") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 512;
    ControlProblem prob = registry::control_problem("harvest_never", g, {});
    const ControlPaths xi = zero_control(g, N);
    const ParticleEnsemble ens = simulate(forward_spec(prob, g), xi, g, N, 11);
    const AdjointPair adj = solve_adjoints(prob, ens, xi);
    const Connection conn = assemble_stopping_connection(prob, ens, xi, adj);
    const ConnectionReport rep = connection_report(conn, prob, ens, xi, 0.25);
    CHECK(rep.k_nondecreasing);
    CHECK(rep.min_gap > 0.0);
    CHECK(rep.tau_k_agreement == 1.0);
    for (std::size_t i = 0; i < N; ++i) CHECK(conn.first_move[i] == g.n_steps);
}


TEST_CASE("optimality sign test at the designed threshold") {
    // the stationary-cost follower is built so that reflecting at c0/2 is the
    // optimal control; every admissible direction has nonpositive derivative
    // there, while an over-pushing control has a strictly improving direction
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    const std::size_t N = 4096;
    ControlProblem prob = registry::control_problem("monotone_follower", g, {{"c0", 1.2}});
    prob.regression.barrier_level = 0.6;
    prob.regression.barrier_width = std::sqrt(g.dt);
    const ControlledRun opt = simulate_threshold(prob, 0.6, g, N, 51);
    const AdjointPair adj = solve_adjoints(prob, opt.ens, opt.xi);

    auto eta_of = [&](int which) {
        Perturbation eta;
        eta.cum = GridProcess(g.n_steps + 1, N, 0.0);
        for (std::size_t k = 0; k <= g.n_steps; ++k)
            for (std::size_t i = 0; i < N; ++i) {
                if (which == 1)
                    eta.cum.at(k, i) = g.time(k) >= 0.3 ? 0.5 : 0.0;
                else
                    eta.cum.at(k, i) = (which == 2 ? 1.0 : -1.0) * opt.xi.cum.at(k, i);
            }
        return eta;
    };
    for (int which : {1, 2, 3}) {
        const DerivativeReport dr =
            directional_derivative(prob, opt.ens, opt.xi, eta_of(which), adj, g, 51, {});
        CHECK(dr.analytic <= 3.0 * dr.analytic_se + 0.5 * g.dt);
    }

    // over-pushing control: scaling the pushes back is strictly improving
    ControlProblem prob_bad = registry::control_problem("monotone_follower", g, {{"c0", 1.2}});
    prob_bad.regression.barrier_level = 0.2;
    prob_bad.regression.barrier_width = std::sqrt(g.dt);
    const ControlledRun bad = simulate_threshold(prob_bad, 0.2, g, N, 51);
    const AdjointPair adj_bad = solve_adjoints(prob_bad, bad.ens, bad.xi);
    Perturbation eta3;
    eta3.cum = GridProcess(g.n_steps + 1, N, 0.0);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i) eta3.cum.at(k, i) = -bad.xi.cum.at(k, i);
    eta3.eps = 1e-2;
    const DerivativeReport dr =
        directional_derivative(prob_bad, bad.ens, bad.xi, eta3, adj_bad, g, 51, {});
    CHECK(dr.analytic > 3.0 * dr.analytic_se);
}

TEST_CASE("control problems pass the derivative consistency probes") {
    const TimeGrid g = make_grid(1.0, 0.01, 0.0);
    for (const char* name :
         {"monotone_follower", "monotone_follower_flat", "connection_harvest", "harvest_never"})
        CHECK_NOTHROW(registry::control_problem(name, g, {}).validate());

    ControlProblem lying = registry::control_problem("connection_harvest", g, {});
    lying.h_x = [](double, double) { return 3.0; };  // true slope is c1 = 0.5
    CHECK_THROWS_AS(lying.validate(), OutOfRange);
}

TEST_CASE("averaging functional uses trapezoid weights over the window") {
    const double dt = 0.1;
    MemoryFunctional avg;
    avg.kind = MemoryFunctional::Kind::average;
    avg.weights = {1.0, 2.0, 3.0};           // a(r) at offsets 0, dt, 2dt
    const std::vector<double> seg = {4.0, 5.0, 6.0};
    // trapezoid of a(r) seg(r): (0.5*4 + 10 + 0.5*18) * dt
    CHECK(avg.apply(seg, dt) == doctest::Approx((2.0 + 10.0 + 9.0) * dt));
    MemoryFunctional bad = avg;
    bad.weights = {1.0, 2.0};
    CHECK_THROWS_AS(bad.apply(seg, dt), OffsetOutOfRange);
}
