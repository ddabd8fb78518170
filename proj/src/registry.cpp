#include "mfsc/registry.hpp"

#include <cmath>
#include <numbers>

namespace mfsc::registry {

namespace {

double get(const Params& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

std::vector<double> const_alpha(const TimeGrid& g, double v) {
    return std::vector<double>(g.delay_steps + 1, v);
}

// discrete-monitoring correction of a reflected random walk's running maximum
constexpr double kDiscreteSupShift = 0.5826;

// E[future push of the reflection policy from the barrier] for sigma-Brownian
// dynamics on [t, T], with the discrete-grid shift folded in
double expected_future_sup(double sigma, double T, double t, double dt) {
    const double u = std::max(T - t, 0.0);
    return sigma * (std::sqrt(2.0 * u / std::numbers::pi) - kDiscreteSupShift * std::sqrt(dt));
}

}  // namespace

CoefficientSpec coefficients(const std::string& name, const TimeGrid& grid,
                             const Params& params) {
    CoefficientSpec s;
    s.alpha = const_alpha(grid, get(params, "x0", 0.0));
    if (name == "zero" || name == "pure_jump") {
        s.lambda = [](double) { return 1.0; };
        return s;
    }
    if (name == "brownian") {
        const double sigma = get(params, "sigma", 1.0);
        s.sigma = [sigma](const CoefContext&) { return sigma; };
        s.lipschitz_sigma = 0.0;
        return s;
    }
    if (name == "mf_ou") {
        // attraction to the ensemble mean
        const double theta = get(params, "theta", 1.0);
        const double sigma = get(params, "sigma", 1.0);
        s.b = [theta](const CoefContext& c) { return -theta * (c.x - c.law.mu1); };
        s.sigma = [sigma](const CoefContext&) { return sigma; };
        s.lipschitz_b = 2.0 * theta;
        return s;
    }
    if (name == "drift_unit") {
        s.b = [](const CoefContext&) { return 1.0; };
        return s;
    }
    if (name == "delay_linear") {
        // dX = -X(t - delta) dt, alpha = 1 on [-delta, 0]
        s.alpha = const_alpha(grid, get(params, "x0", 1.0));
        const std::size_t d = grid.delay_steps;
        s.b = [d](const CoefContext& c) { return -c.x_seg->at_offset(d); };
        s.lipschitz_b = 1.0;
        return s;
    }
    throw ConfigParse("unknown coefficient set: " + name);
}

DriverSpec driver(const std::string& name, const TimeGrid& grid, const Params& params) {
    DriverSpec d;
    if (name == "zero") {
        d.F = [](const DriverContext&) { return 0.0; };
        d.lipschitz_c = 0.0;
        return d;
    }
    if (name == "one") {
        const double c = get(params, "value", 1.0);
        d.F = [c](const DriverContext&) { return c; };
        d.lipschitz_c = 0.0;
        d.zero_bound = std::abs(c);
        return d;
    }
    if (name == "linear_y") {
        const double a = get(params, "coef", -1.0);
        d.F = [a](const DriverContext& c) { return a * c.y; };
        d.lipschitz_c = std::abs(a);
        return d;
    }
    if (name == "advanced_eval") {
        // F(s) = E[Y(s + delta) | F_s]
        const std::size_t off = grid.delay_steps;
        d.F = [off](const DriverContext& c) { return c.y_adv[off]; };
        d.lipschitz_c = 1.0;
        return d;
    }
    if (name == "mean_field_y") {
        // F = window-averaged mean of the law of Y^s
        d.F = [](const DriverContext& c) { return c.law.y_mean; };
        d.lipschitz_c = 1.0;
        return d;
    }
    throw ConfigParse("unknown driver: " + name);
}

BarrierSpec barrier(const std::string& name, const ParticleEnsemble& ens, const Params& params) {
    if (name == "never") {
        const double level = get(params, "level", -10.0);
        const double r = get(params, "terminal", 1.0);
        return make_barrier(
            ens, [level](double, double) { return level; }, [r](double) { return r; });
    }
    if (name == "const_half") {
        const double r = get(params, "terminal", 1.0);
        return make_barrier(
            ens, [](double, double) { return 0.5; }, [r](double) { return r; });
    }
    if (name == "linear_t") {
        const double a0 = get(params, "a0", 0.3);
        const double a1 = get(params, "a1", 0.4);
        const double r = get(params, "terminal", 1.0);
        return make_barrier(
            ens, [a0, a1](double t, double) { return a0 + a1 * t; }, [r](double) { return r; });
    }
    if (name == "tanh_payoff") {
        // increasing-in-t barrier with a bounded smooth terminal payoff
        const double a0 = get(params, "a0", 0.3);
        const double a1 = get(params, "a1", 0.4);
        return make_barrier(
            ens, [a0, a1](double t, double) { return a0 + a1 * t; },
            [](double x) { return 0.7 + 0.2 * (1.0 + std::tanh(x)); });
    }
    throw ConfigParse("unknown barrier: " + name);
}

ControlProblem control_problem(const std::string& name, const TimeGrid& grid,
                               const Params& params) {
    ControlProblem p;
    p.alpha = const_alpha(grid, get(params, "x0", 0.0));
    p.regression.degree = 3;

    const double sigma = get(params, "sigma", 1.0);
    const double lam0 = get(params, "lambda0", 1.0);
    p.sigma.value = [sigma](const CtrlContext&) { return sigma; };
    p.lambda = [lam0](double) { return -lam0; };
    p.g = [](double x, LawMoments) { return -x * x; };
    p.g_x = [](double x, LawMoments) { return -2.0 * x; };

    if (name == "monotone_follower") {
        // h(t) chosen so the constant threshold c0/2 satisfies the variational
        // inequalities with equality at the barrier for every t
        const double c0 = get(params, "c0", 1.2);
        const double T = grid.T, dt = grid.dt;
        p.h = [c0, sigma, T, dt](double t, double) {
            return -c0 + 2.0 * expected_future_sup(sigma, T, t, dt);
        };
        p.h_x = [](double, double) { return 0.0; };
        return p;
    }
    if (name == "monotone_follower_flat") {
        const double c = get(params, "c", 1.0);
        p.h = [c](double, double) { return -c; };
        p.h_x = [](double, double) { return 0.0; };
        return p;
    }
    if (name == "connection_harvest") {
        // h(t, x) = c0(t) + c1 x with c0 calibrated so the reflection threshold
        // a_tgt is optimal; dK = c1 dxi is then a genuine nondecreasing K
        const double c1 = get(params, "c1", 0.5);
        const double a_tgt = get(params, "a_tgt", 0.5);
        const double T = grid.T, dt = grid.dt;
        p.alpha = const_alpha(grid, get(params, "x0", -0.5));
        p.h = [c1, a_tgt, sigma, T, dt](double t, double x) {
            return -(2.0 + c1) * a_tgt + (2.0 + c1) * expected_future_sup(sigma, T, t, dt) +
                   c1 * x;
        };
        p.h_x = [c1](double, double) { return c1; };
        return p;
    }
    if (name == "harvest_never") {
        // cost so large the VI sign is forced and xi = 0 is optimal
        const double c = get(params, "c", 10.0);
        p.h = [c](double, double) { return -c; };
        p.h_x = [](double, double) { return 0.0; };
        return p;
    }
    throw ConfigParse("unknown control problem: " + name);
}

MarkovStoppingSpec markov_spec(const std::string& name, const TimeGrid& grid,
                               const Params& params) {
    MarkovStoppingSpec m;
    m.T = grid.T;
    if (name == "reflected_exponential") {
        const double a0 = get(params, "a0", 0.3);
        const double a1 = get(params, "a1", 0.4);
        m.x0 = get(params, "x0", 0.0);
        m.sigma = get(params, "sigma", 1.0);
        m.barrier = [a0, a1](double t, double) { return a0 + a1 * t; };
        m.terminal = [](double x) { return 0.7 + 0.2 * (1.0 + std::tanh(x)); };
        m.driver_y = -1.0;
        return m;
    }
    if (name == "reflected_deterministic") {
        m.x0 = 0.0;
        m.sigma = 0.0;
        m.barrier = [](double, double) { return 0.5; };
        m.terminal = [](double) { return 1.0; };
        m.driver_y = -1.0;
        return m;
    }
    if (name == "never_binding") {
        m.x0 = 0.0;
        m.sigma = get(params, "sigma", 1.0);
        m.barrier = [](double, double) { return -10.0; };
        m.terminal = [](double) { return 1.0; };
        return m;
    }
    throw NotMarkovReducible("no lattice reduction registered for: " + name);
}

std::vector<CatalogEntry> catalog() {
    return {
        {"coefficients", "zero", "b=0, sigma=0, lambda=1 (pure jump transfer)"},
        {"coefficients", "brownian", "b=0, sigma=const, lambda=0"},
        {"coefficients", "mf_ou", "mean-field OU: b=-theta(x - mean), sigma=const"},
        {"coefficients", "drift_unit", "b=1, sigma=0"},
        {"coefficients", "delay_linear", "b=-X(t-delta), sigma=0, alpha=1"},
        {"driver", "zero", "F=0"},
        {"driver", "one", "F=const"},
        {"driver", "linear_y", "F=coef*y"},
        {"driver", "advanced_eval", "F = E[Y(t+delta)|F_t] (advanced deterministic)"},
        {"driver", "mean_field_y", "F = window mean of the law of Y"},
        {"barrier", "never", "S=-10"},
        {"barrier", "const_half", "S=0.5"},
        {"barrier", "linear_t", "S=a0+a1*t"},
        {"barrier", "tanh_payoff", "S=a0+a1*t with R=0.7+0.2(1+tanh x)"},
        {"problem", "advanced_deterministic", "advanced_eval driver, R=1, S=-10, delta=0.5"},
        {"problem", "reflected_exponential", "F=-y, rising barrier, tanh terminal (Markov)"},
        {"problem", "reflected_deterministic", "F=-y, R=1, S=0.5, sigma=0"},
        {"problem", "monotone_follower", "singular harvest, stationary threshold cost"},
        {"problem", "monotone_follower_flat", "singular harvest, h=-c"},
        {"problem", "connection_harvest", "state-dependent cost, dK = c1 dxi"},
        {"problem", "harvest_never", "cost forces xi=0"},
    };
}

}  // namespace mfsc::registry
