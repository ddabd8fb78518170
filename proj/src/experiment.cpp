#include "mfsc/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>

#include "mfsc/control.hpp"
#include "mfsc/measure.hpp"
#include "mfsc/registry.hpp"
#include "mfsc/rng.hpp"
#include <tuple>

namespace mfsc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct OutputWriter {
    fs::path dir;
    std::vector<std::string> files;

    explicit OutputWriter(const std::string& d) : dir(d) { fs::create_directories(dir); }

    std::ofstream open(const std::string& name) {
        files.push_back(name);
        return std::ofstream(dir / name);
    }
    void write_text(const std::string& name, const std::string& text) {
        auto os = open(name);
        os << text;
    }
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

registry::Params params_of(const json& cfg, const char* key) {
    registry::Params p;
    if (cfg.contains(key))
        for (auto& [k, v] : cfg.at(key).items()) p[k] = v.get<double>();
    return p;
}

TimeGrid grid_of(const json& cfg) {
    const auto& g = cfg.at("grid");
    return make_grid(g.value("T", 1.0), g.value("dt", 0.01), g.value("delta", 0.0));
}

SingularControl control_of(const json& cfg) {
    SingularControl xi;
    if (cfg.contains("control")) {
        xi.jump_times = cfg["control"].value("jump_times", std::vector<double>{});
        xi.jump_sizes = cfg["control"].value("jump_sizes", std::vector<double>{});
    }
    return xi;
}

void dump_paths_csv(OutputWriter& out, const ParticleEnsemble& ens, std::size_t max_particles) {
    auto os = out.open("paths.csv");
    os << "t,particle,x\n";
    const std::size_t np = std::min(max_particles, ens.n_particles());
    for (std::size_t k = 0; k <= ens.grid().n_steps; ++k)
        for (std::size_t i = 0; i < np; ++i)
            os << fmt17(ens.grid().time(k)) << ',' << i << ',' << fmt17(ens.x(k, i)) << '\n';
}

void dump_law_csv(OutputWriter& out, const ParticleEnsemble& ens) {
    auto os = out.open("law.csv");
    os << "t,mean,var\n";
    for (std::size_t k = 0; k <= ens.grid().n_steps; ++k) {
        const LawMoments m = ens.law_moments(k);
        os << fmt17(ens.grid().time(k)) << ',' << fmt17(m.mu1) << ','
           << fmt17(m.mu2 - m.mu1 * m.mu1) << '\n';
    }
}

void dump_solution_csv(OutputWriter& out, const RbsdeSolution& sol, const TimeGrid& grid) {
    auto os = out.open("solution.csv");
    os << "t,particle,Y,Z,K\n";
    for (std::size_t k = 0; k <= grid.n_steps; ++k)
        for (std::size_t i = 0; i < sol.Y.n_particles(); ++i)
            os << fmt17(grid.time(k)) << ',' << i << ',' << fmt17(sol.Y.at(k, i)) << ','
               << fmt17(sol.Z.at(k, i)) << ',' << fmt17(sol.K.at(k, i)) << '\n';
}

void dump_picard_csv(OutputWriter& out, const std::vector<double>& norms) {
    auto os = out.open("picard.csv");
    os << "iter,h_beta_diff\n";
    for (std::size_t i = 0; i < norms.size(); ++i)
        os << (i + 1) << ',' << fmt17(norms[i]) << '\n';
}

// ------------------------------------------------------------------ norms --

json run_norms(const json& cfg, OutputWriter& out) {
    json rep;
    json checks;
    const std::string mode = cfg.value("mode", "point_mass");
    if (mode == "point_mass") {
        const FourierWeight w = FourierWeight::rational();
        std::vector<double> x0s = cfg.value("x0_list", std::vector<double>{0.0, 1.0, -3.0});
        json vals = json::array();
        bool ok_norm = true, ok_self = true;
        for (double x0 : x0s) {
            const AtomicMeasure m = AtomicMeasure::point_mass(x0);
            const double v = measure_norm_sq(m, w);
            FourierWeight w2 = w;
            w2.R *= 2.0;
            w2.dy *= 0.5;
            const double v2 = measure_norm_sq(m, w2);
            vals.push_back({{"x0", x0}, {"norm_sq", v}, {"self_check_delta", std::abs(v2 - v)}});
            if (std::abs(v - 2.0) > 1e-3) ok_norm = false;
            if (std::abs(v2 - v) > 1e-4) ok_self = false;
        }
        rep["point_mass"] = vals;
        checks["norm_eq_2_within_1e3"] = ok_norm;
        checks["self_check_below_1e4"] = ok_self;
    } else if (mode == "lemma26") {
        const FourierWeight w = FourierWeight::gaussian();
        const std::size_t trials = cfg.value("trials", 100);
        const std::size_t m = cfg.value("samples", 256);
        const std::uint64_t seed = cfg.value("seed", 5);
        const double c0 = std::sqrt(std::numbers::pi);
        std::size_t violations = 0;
        double worst_ratio = 0.0;
        for (std::size_t trial = 0; trial < trials; ++trial) {
            std::vector<double> x1(m), x2(m);
            const double loc = 4.0 * RngStream::uniform(RngStream::key(seed, trial, 0, 3)) - 2.0;
            const double sc = 0.5 + 1.5 * RngStream::uniform(RngStream::key(seed, trial, 1, 3));
            const double a = 0.8 + 0.4 * RngStream::uniform(RngStream::key(seed, trial, 2, 3));
            const double b = 0.6 * RngStream::uniform(RngStream::key(seed, trial, 3, 3)) - 0.3;
            const double ns = 0.3 * RngStream::uniform(RngStream::key(seed, trial, 4, 3));
            double msq = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                x1[i] = loc + sc * RngStream::normal(seed, trial, i, 4);
                x2[i] = a * x1[i] + b + ns * RngStream::normal(seed, trial, i, 5);
                msq += (x1[i] - x2[i]) * (x1[i] - x2[i]);
            }
            msq /= static_cast<double>(m);
            const double lhs = law_distance_sq(x1, x2, w);
            const double rhs = c0 * msq;
            if (lhs > rhs) ++violations;
            if (rhs > 0.0) worst_ratio = std::max(worst_ratio, lhs / rhs);
        }
        rep["violations"] = violations;
        rep["worst_ratio"] = worst_ratio;
        checks["lemma26_zero_violations"] = (violations == 0);
    } else {
        throw ConfigParse("norms: unknown mode " + mode);
    }
    rep["checks"] = checks;
    (void)out;
    return rep;
}

// --------------------------------------------------------------- simulate --

json run_simulate(const json& cfg, OutputWriter& out) {
    const TimeGrid grid = grid_of(cfg);
    const std::size_t N = cfg.value("n_particles", 1024);
    const std::uint64_t seed = cfg.value("seed", 1);
    SimulateOptions opts;
    opts.threads = cfg.value("threads", 1);
    const CoefficientSpec spec =
        registry::coefficients(cfg.value("coefficients", "brownian"), grid, params_of(cfg, "params"));
    const ParticleEnsemble ens = simulate(spec, control_of(cfg), grid, N, seed, opts);

    dump_paths_csv(out, ens, cfg.value("dump_particles", 64));
    dump_law_csv(out, ens);

    json rep;
    const LawMoments mT = ens.law_moments(grid.n_steps);
    rep["terminal_mean"] = mT.mu1;
    rep["terminal_var"] = mT.mu2 - mT.mu1 * mT.mu1;

    json checks;
    if (cfg.value("reconstruction_check", false)) {
        // cumulative central moment derivatives against the end moments
        double rec1 = 0.0, rec2 = 0.0, maxm2 = 0.0;
        for (std::size_t k = 1; k < grid.n_steps; ++k) {
            const auto d = law_derivative(ens, k, 1);
            rec1 += d[0] * grid.dt;
            rec2 += d[1] * grid.dt;
        }
        for (std::size_t k = 0; k <= grid.n_steps; ++k)
            maxm2 = std::max(maxm2, ens.law_moments(k).mu2);
        const LawMoments m0 = ens.law_moments(0);
        const double d1 = mT.mu1 - m0.mu1, d2 = mT.mu2 - m0.mu2;
        const double rms = std::sqrt(std::max(maxm2, 1e-12));
        const double err1 = std::abs(rec1 - d1) / std::max(std::abs(d1), rms);
        const double err2 = std::abs(rec2 - d2) / std::max(std::abs(d2), rms * rms);
        rep["reconstruction"] = {{"moment1_err_rel", err1}, {"moment2_err_rel", err2}};
        checks["reconstruction_within_5pct"] = (err1 <= 0.05 && err2 <= 0.05);
    }
    rep["checks"] = checks;
    return rep;
}

// ------------------------------------------------------------------ rbsde --

json run_rbsde(const json& cfg, OutputWriter& out) {
    const TimeGrid grid = grid_of(cfg);
    const std::size_t N = cfg.value("n_particles", 256);
    const std::uint64_t seed = cfg.value("seed", 1);
    const CoefficientSpec spec =
        registry::coefficients(cfg.value("coefficients", "zero"), grid, params_of(cfg, "params"));
    SimulateOptions sopts;
    sopts.threads = cfg.value("threads", 1);
    const ParticleEnsemble ens =
        simulate(spec, SingularControl{}, grid, N, seed, sopts);

    const DriverSpec driver =
        registry::driver(cfg.value("driver", "zero"), grid, params_of(cfg, "driver_params"));
    driver.validate(grid);
    spec.validate(grid);
    const BarrierSpec barrier =
        registry::barrier(cfg.value("barrier", "never"), ens, params_of(cfg, "barrier_params"));

    RbsdeOptions opts;
    opts.rho = cfg.value("rho", 4.0);
    opts.tol = cfg.value("tol", 1e-12);
    opts.max_iter = cfg.value("max_iter", 12);
    opts.unsafe_barrier = cfg.value("unsafe_barrier", false);

    const RbsdeSolution sol = solve_picard(driver, barrier, ens, grid, opts);
    dump_solution_csv(out, sol, grid);
    dump_picard_csv(out, sol.picard_norms);

    json rep;
    json checks;
    rep["y0"] = sol.y0_mean();
    rep["skorokhod_residual"] = skorokhod_residual(sol, barrier);

    if (cfg.contains("expect_y")) {
        bool ok = true;
        json tab = json::array();
        for (const auto& e : cfg["expect_y"]) {
            const double t = e.at("t").get<double>();
            const std::size_t k = static_cast<std::size_t>(std::llround(t / grid.dt));
            const double got = mean_of(sol.Y.row(k));
            const double want = e.at("value").get<double>();
            const double tol = e.at("tol").get<double>();
            tab.push_back({{"t", t}, {"value", got}, {"expected", want}, {"tol", tol}});
            if (std::abs(got - want) > tol) ok = false;
        }
        rep["expect_y"] = tab;
        checks["y_values"] = ok;
    }
    if (cfg.value("reflection_checks", false)) {
        // dK > 0 only at grid points where the max binds (bitwise Y = S)
        bool flat_ok = true;
        for (std::size_t i = 0; i < N && flat_ok; ++i) {
            double prev = 0.0;
            for (std::size_t k = 0; k <= grid.n_steps; ++k) {
                const double dk = sol.K.at(k, i) - prev;
                prev = sol.K.at(k, i);
                if (dk > 0.0 && sol.Y.at(k, i) != barrier.S.at(k, i)) {
                    flat_ok = false;
                    break;
                }
            }
        }
        checks["dk_binds_exactly"] = flat_ok;
        const double sk = skorokhod_residual(sol, barrier);
        checks["skorokhod_leq_5dt"] = std::abs(sk) <= 5.0 * grid.dt;
    }
    if (cfg.contains("contraction_check")) {
        const auto rhos = cfg["contraction_check"].value("rho_list", std::vector<double>{2, 4, 8});
        const double slack = cfg["contraction_check"].value("slack", 0.05);
        bool ok = true;
        json tab = json::array();
        for (double rho : rhos) {
            RbsdeOptions o2 = opts;
            o2.rho = rho;
            const RbsdeSolution s2 = solve_picard(driver, barrier, ens, grid, o2);
            json ratios = json::array();
            for (std::size_t m = 1; m < s2.picard_norms.size(); ++m) {
                const double den = s2.picard_norms[m - 1];
                const double r = den > 0.0 ? s2.picard_norms[m] / den : 0.0;
                ratios.push_back(r);
                if (r > 1.0 / rho + slack) ok = false;
            }
            tab.push_back({{"rho", rho}, {"ratios", ratios}});
        }
        rep["contraction"] = tab;
        checks["contraction_ratios"] = ok;
    }
    rep["checks"] = checks;
    return rep;
}

// --------------------------------------------------------------- stopping --

json run_stopping(const json& cfg, OutputWriter& out) {
    const TimeGrid grid = grid_of(cfg);
    const std::size_t N = cfg.value("n_particles", 4096);
    const std::uint64_t seed = cfg.value("seed", 7);
    const std::string problem = cfg.value("problem", "reflected_exponential");
    const registry::Params pp = params_of(cfg, "params");

    CoefficientSpec spec = registry::coefficients(
        problem == "reflected_deterministic" ? "zero" : "brownian", grid, pp);
    if (problem == "reflected_deterministic") spec.lambda = {};
    const ParticleEnsemble ens = simulate(spec, SingularControl{}, grid, N, seed);

    DriverSpec driver = registry::driver("linear_y", grid, {});
    BarrierSpec barrier = problem == "reflected_deterministic"
                              ? registry::barrier("const_half", ens, {})
                              : registry::barrier("tanh_payoff", ens, pp);

    RbsdeOptions opts;
    opts.rho = cfg.value("rho", 4.0);
    const RbsdeSolution sol = solve_picard(driver, barrier, ens, grid, opts);
    dump_solution_csv(out, sol, grid);

    const StoppingProblem prob = StoppingProblem::from_solution(sol, barrier, grid);

    const StoppingTime th = hitting_time(sol, barrier, 0);
    const StoppingTime tk = k_increase_time(sol, 0);
    std::size_t agree = 0, within1 = 0;
    for (std::size_t i = 0; i < N; ++i) {
        if (th.tau[i] == tk.tau[i]) ++agree;
        const auto d = th.tau[i] > tk.tau[i] ? th.tau[i] - tk.tau[i] : tk.tau[i] - th.tau[i];
        if (d <= 1) ++within1;
    }
    const double agree_rate = static_cast<double>(agree) / static_cast<double>(N);

    const SnellReport snell = snell_check(prob, sol, ens, 0, cfg.value("n_candidates", 20), seed);
    const KFormulaReport kf = k_runningmax_check(prob, sol, ens);

    const MarkovStoppingSpec mspec = registry::markov_spec(problem, grid, pp);
    const double y0_lat = dp_oracle(mspec, cfg.value("lattice_steps", 4000));
    const double y0 = sol.y0_mean();
    // MC error of Y(0): spread of the regression target at the root
    std::vector<double> u0(N);
    for (std::size_t i = 0; i < N; ++i)
        u0[i] = sol.Y.at(1, i) + sol.F_used.at(0, i) * grid.dt;
    const double y0_se = stderr_of(u0);

    json rep;
    rep["y0"] = y0;
    rep["y0_oracle"] = y0_lat;
    rep["y0_se"] = y0_se;
    rep["tau_agreement_rate"] = agree_rate;
    rep["tau_within_one_step_rate"] = static_cast<double>(within1) / static_cast<double>(N);
    rep["snell_gap"] = snell.gap_tau;
    rep["snell_gap_se"] = snell.gap_tau_se;
    rep["snell_best_candidate_gap"] = snell.best_candidate_gap;
    rep["snell_best_candidate_se"] = snell.best_candidate_se;
    rep["k_formula_gap"] = kf.mean_max_abs;
    rep["k_formula_se"] = kf.se;

    json checks;
    checks["tau_agreement_geq_99pct"] = agree_rate >= 0.99;
    checks["y0_matches_oracle"] = std::abs(y0 - y0_lat) <= 0.01 * std::abs(y0_lat) + 3.0 * y0_se;
    checks["k_formula_within_5dt"] = kf.mean_max_abs <= 5.0 * grid.dt + 3.0 * kf.se;
    checks["no_candidate_beats_tau_hat"] =
        snell.best_candidate_gap <= 3.0 * std::max(snell.best_candidate_se, 1e-12);
    // unconditional consistency at t = 0: the stopped value at tau-hat equals
    // Y(0) up to MC error and the O(dt) quadrature of the driver integral
    checks["snell_value_matches_y0"] =
        std::abs(snell.gap_tau) <= 3.0 * snell.gap_tau_se + 2.0 * grid.dt;
    rep["checks"] = checks;
    return rep;
}

// ----------------------------------------------------------- control-check --

json run_control_check(const json& cfg, OutputWriter& out) {
    const TimeGrid grid = grid_of(cfg);
    const std::size_t N = cfg.value("n_particles", 4096);
    const std::uint64_t seed = cfg.value("seed", 11);
    const registry::Params pp = params_of(cfg, "params");
    const std::string pname = cfg.value("problem", "monotone_follower");
    ControlProblem prob = registry::control_problem(pname, grid, pp);
    prob.validate();
    const double sigma = pp.count("sigma") ? pp.at("sigma") : 1.0;

    json rep;
    json checks;

    // grid-search oracle for the optimal threshold
    std::vector<double> levels = cfg.value(
        "levels", std::vector<double>{0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 1.00});
    const ThresholdSearch search = optimize_threshold(prob, levels, grid, N, seed, true);
    rep["best_level"] = search.best_level;
    {
        json curve = json::array();
        auto os = out.open("j_curve.csv");
        os << "level,j,se\n";
        for (std::size_t i = 0; i < search.levels.size(); ++i) {
            curve.push_back({{"level", search.levels[i]},
                             {"j", search.j_mean[i]},
                             {"se", search.j_se[i]}});
            os << fmt17(search.levels[i]) << ',' << fmt17(search.j_mean[i]) << ','
               << fmt17(search.j_se[i]) << '\n';
        }
        rep["j_curve"] = curve;
    }
    checks["interior_argmax"] =
        search.best_level > levels.front() + 1e-9 && search.best_level < levels.back() - 1e-9;

    // variational inequalities at the optimum (barrier-aware basis)
    auto vi_at = [&](double level) {
        ControlProblem p2 = registry::control_problem(pname, grid, pp);
        p2.regression.barrier_level = level;
        p2.regression.barrier_width = std::max(sigma * std::sqrt(grid.dt), 1e-8);
        const ControlledRun run = simulate_threshold(p2, level, grid, N, seed);
        const AdjointPair a2 = solve_adjoints(p2, run.ens, run.xi);
        return std::tuple<ControlledRun, AdjointPair, ControlProblem>(run, a2, p2);
    };
    prob.regression.barrier_level = search.best_level;
    prob.regression.barrier_width = std::max(sigma * std::sqrt(grid.dt), 1e-8);
    const ControlledRun opt = simulate_threshold(prob, search.best_level, grid, N, seed);
    const AdjointPair adj = solve_adjoints(prob, opt.ens, opt.xi);
    const SufficientReport suff = check_sufficient(prob, opt.ens, opt.xi, adj, seed + 1);

    // the complementarity sum at the estimated argmax inherits the argmax's
    // statistical noise: propagate it by the delta method, estimating the
    // sensitivity of the sum to the level and the level's standard error from
    // common-random-number runs at level +- da
    const double da = 0.05;
    double comp_slope = 0.0, level_se = 0.0;
    {
        auto [run_p, adj_p, prob_p] = vi_at(search.best_level + da);
        auto [run_m, adj_m, prob_m] = vi_at(search.best_level - da);
        const NecessaryReport nec_p = check_necessary(prob_p, run_p.ens, run_p.xi, adj_p);
        const NecessaryReport nec_m = check_necessary(prob_m, run_m.ens, run_m.xi, adj_m);
        comp_slope = (nec_p.complementarity - nec_m.complementarity) / (2.0 * da);
        const std::vector<double> jp = j_value(prob_p, run_p.ens, run_p.xi);
        const std::vector<double> jm = j_value(prob_m, run_m.ens, run_m.xi);
        const std::vector<double> j0 = j_value(prob, opt.ens, opt.xi);
        std::vector<double> dj(N);
        for (std::size_t i = 0; i < N; ++i) dj[i] = (jp[i] - jm[i]) / (2.0 * da);
        const double jpp =
            std::abs(mean_of(jp) - 2.0 * mean_of(j0) + mean_of(jm)) / (da * da);
        level_se = stderr_of(dj) / std::max(jpp, 1e-6);
    }
    const double comp_gate =
        3.0 * (suff.vi.complementarity_se + std::abs(comp_slope) * level_se) + 0.5 * grid.dt;
    rep["max_violation_1_17a"] = suff.vi.max_excursion;
    rep["max_violation_se"] = suff.vi.max_excursion_se;
    rep["complementarity_sum"] = suff.vi.complementarity;
    rep["complementarity_se"] = suff.vi.complementarity_se;
    rep["complementarity_slope"] = comp_slope;
    rep["level_se"] = level_se;
    rep["complementarity_gate"] = comp_gate;
    rep["concavity_min_curvature"] = suff.max_curvature;
    checks["variational_inequality_i"] = suff.vi.max_excursion <= 3.0 * std::max(suff.vi.max_excursion_se, 1e-12);
    checks["vi_complementarity"] = std::abs(suff.vi.complementarity) <= comp_gate;

    // adjoint representation of dJ/da vs common-random-number finite differences
    // at a deterministic reference control
    const double ramp = cfg.value("reference_ramp", 0.4);
    ControlPaths xi_ref;
    xi_ref.cum = GridProcess(grid.n_steps + 1, N);
    for (std::size_t k = 0; k <= grid.n_steps; ++k)
        for (std::size_t i = 0; i < N; ++i)
            xi_ref.cum.at(k, i) = ramp * grid.time(k);
    ControlProblem prob_ref = registry::control_problem(pname, grid, pp);
    const ParticleEnsemble ens_ref =
        simulate(forward_spec(prob_ref, grid), xi_ref, grid, N, seed);
    const AdjointPair adj_ref = solve_adjoints(prob_ref, ens_ref, xi_ref);

    auto make_eta = [&](int which) {
        Perturbation eta;
        eta.cum = GridProcess(grid.n_steps + 1, N, 0.0);
        eta.eps = 1e-2;
        for (std::size_t k = 0; k <= grid.n_steps; ++k)
            for (std::size_t i = 0; i < N; ++i) {
                if (which == 1)
                    eta.cum.at(k, i) = grid.time(k) >= 0.3 ? 1.0 : 0.0;
                else if (which == 2)
                    eta.cum.at(k, i) = xi_ref.cum.at(k, i);
                else
                    eta.cum.at(k, i) = -xi_ref.cum.at(k, i);
            }
        return eta;
    };
    bool fd_ok = true;
    json fd_tab = json::array();
    for (int which : {1, 2, 3}) {
        const Perturbation eta = make_eta(which);
        const DerivativeReport dr =
            directional_derivative(prob_ref, ens_ref, xi_ref, eta, adj_ref, grid, seed);
        for (const auto& [a, fdv] : dr.fd) {
            const double gate = std::max(3.0 * dr.fd_se.at(a), 0.05 * std::abs(fdv));
            const bool ok = std::abs(dr.analytic - fdv) <= gate;
            if (!ok) fd_ok = false;
            fd_tab.push_back({{"eta", which},
                              {"a", a},
                              {"analytic", dr.analytic},
                              {"fd", fdv},
                              {"gate", gate},
                              {"ok", ok}});
        }
    }
    rep["deriv_vs_fd_table"] = fd_tab;
    checks["fd_matches_adjoint_derivative"] = fd_ok;

    // negative test: harvesting everything at t = 0 must trip a condition
    {
        SingularControl bad = SingularControl::single_jump(0.0, cfg.value("bad_jump", 1.0));
        const ControlPaths xi_bad = broadcast_control(bad, grid, N);
        ControlProblem prob_bad = registry::control_problem(pname, grid, pp);
        const ParticleEnsemble ens_bad =
            simulate(forward_spec(prob_bad, grid), xi_bad, grid, N, seed);
        const AdjointPair adj_bad = solve_adjoints(prob_bad, ens_bad, xi_bad);
        const NecessaryReport nb = check_necessary(prob_bad, ens_bad, xi_bad, adj_bad);
        const bool i_ok = nb.max_excursion <= 3.0 * std::max(nb.max_excursion_se, 1e-12);
        const bool ii_ok =
            std::abs(nb.complementarity) <= 3.0 * nb.complementarity_se + 0.5 * grid.dt;
        rep["negative_test"] = {{"max_excursion", nb.max_excursion},
                                {"complementarity", nb.complementarity},
                                {"complementarity_se", nb.complementarity_se}};
        checks["negative_test_fails_a_check"] = !(i_ok && ii_ok);
    }
    rep["checks"] = checks;
    return rep;
}

// --------------------------------------------------------------- connection --

json run_connection(const json& cfg, OutputWriter& out) {
    const TimeGrid grid = grid_of(cfg);
    const std::size_t N = cfg.value("n_particles", 4096);
    const std::uint64_t seed = cfg.value("seed", 21);
    registry::Params pp = params_of(cfg, "params");
    const std::string pname = cfg.value("problem", "connection_harvest");
    ControlProblem prob = registry::control_problem(pname, grid, pp);
    prob.validate();
    const double sigma = pp.count("sigma") ? pp.at("sigma") : 1.0;
    const double c1 = pp.count("c1") ? pp.at("c1") : 0.5;

    std::vector<double> levels =
        cfg.value("levels", std::vector<double>{0.30, 0.40, 0.50, 0.60, 0.70});
    const ThresholdSearch search = optimize_threshold(prob, levels, grid, N, seed, true);

    prob.regression.barrier_level = search.best_level;
    prob.regression.barrier_width = std::max(sigma * std::sqrt(grid.dt), 1e-8);
    const ControlledRun opt = simulate_threshold(prob, search.best_level, grid, N, seed);
    const AdjointPair adj = solve_adjoints(prob, opt.ens, opt.xi);
    const Connection conn = assemble_stopping_connection(prob, opt.ens, opt.xi, adj);
    dump_solution_csv(out, conn.assembled, grid);
    const double band = (2.0 + c1) * sigma * std::sqrt(grid.dt);
    const ConnectionReport cr = connection_report(conn, prob, opt.ens, opt.xi, band);

    // frozen-region invariants of the assembled solution
    bool frozen_ok = true;
    for (std::size_t j = grid.n_steps; j < grid.n_extended() && frozen_ok; ++j)
        for (std::size_t i = 0; i < N; ++i) {
            if (conn.assembled.Y.at(j, i) != conn.barrier.R[i]) frozen_ok = false;
            if (j > grid.n_steps && conn.assembled.Z.at(j, i) != 0.0) frozen_ok = false;
        }

    json rep;
    rep["best_level"] = search.best_level;
    rep["min_gap"] = cr.min_gap;
    rep["gap_band"] = band;
    rep["frac_below_band"] = cr.frac_below_band;
    rep["per_time_mean_gap_ok"] = cr.per_time_mean_gap_ok;
    rep["skorokhod"] = cr.skorokhod;
    rep["skorokhod_se"] = cr.skorokhod_se;
    rep["tau_k_agreement"] = cr.tau_k_agreement;
    rep["tau_y_agreement"] = cr.tau_y_agreement;
    rep["k_nondecreasing"] = cr.k_nondecreasing;

    json checks;
    checks["k_nondecreasing"] = cr.k_nondecreasing;
    checks["frozen_terminal"] = frozen_ok;
    checks["mean_gap_nonnegative"] = cr.per_time_mean_gap_ok;
    // the minimum over ~1e5 fitted gaps is an extreme statistic; gate the
    // fraction of band violations instead and report the min
    checks["gap_band_quantile"] = cr.frac_below_band <= 1e-3;
    checks["skorokhod_small"] =
        std::abs(cr.skorokhod) <= 3.0 * cr.skorokhod_se + 0.5 * grid.dt;
    checks["tau_matches_first_move"] = cr.tau_k_agreement >= 0.99;
    rep["checks"] = checks;
    return rep;
}

}  // namespace

ExperimentResult run_experiment(const json& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!cfg.contains("experiment")) throw ConfigParse("missing 'experiment' key");
    const std::string kind = cfg.at("experiment").get<std::string>();

    OutputWriter out(out_dir);
    json rep;
    if (kind == "norms")
        rep = run_norms(cfg, out);
    else if (kind == "simulate")
        rep = run_simulate(cfg, out);
    else if (kind == "rbsde")
        rep = run_rbsde(cfg, out);
    else if (kind == "stopping")
        rep = run_stopping(cfg, out);
    else if (kind == "control-check")
        rep = run_control_check(cfg, out);
    else if (kind == "connection")
        rep = run_connection(cfg, out);
    else
        throw UnknownExperiment(kind);

    bool all_ok = true;
    if (rep.contains("checks"))
        for (auto& [name, ok] : rep["checks"].items())
            if (!ok.get<bool>()) all_ok = false;

    ExperimentResult res;
    res.exit_code = all_ok ? 0 : 2;
    res.report_json = rep.dump(2);
    out.write_text("report.json", res.report_json);

    const auto t1 = std::chrono::steady_clock::now();
    json manifest;
    manifest["config_hash"] = fnv1a(cfg.dump());
    manifest["seed"] = cfg.value("seed", 0);
    manifest["version"] = "0.1.0";
    manifest["wall_time_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    manifest["outputs"] = out.files;
    out.write_text("manifest.json", manifest.dump(2));
    res.outputs = out.files;
    return res;
}

int run_config_file(const std::string& config_path, const std::string& out_dir,
                    long long seed_override, int threads_override, bool unsafe_barrier) {
    try {
        std::ifstream is(config_path);
        if (!is) throw ConfigParse("cannot open config: " + config_path);
        json cfg;
        try {
            cfg = json::parse(is);
        } catch (const std::exception& e) {
            throw ConfigParse(e.what());
        }
        if (seed_override >= 0) cfg["seed"] = seed_override;
        if (threads_override >= 0) cfg["threads"] = threads_override;
        if (unsafe_barrier) cfg["unsafe_barrier"] = true;
        const ExperimentResult res = run_experiment(cfg, out_dir);
        return res.exit_code;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace mfsc
