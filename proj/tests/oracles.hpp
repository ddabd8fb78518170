#pragma once

// Test-only oracles, independent of the solver implementations they check.

#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

// x'(t) = -x(t - delta), x = alpha on [-delta, 0], integrated by the method of
// steps on a refined grid; returns values at the coarse grid points 0..n.
inline std::vector<double> dde_linear_delay(double T, double dt, double delta, double alpha0,
                                            int refine = 200) {
    const int n = static_cast<int>(std::llround(T / dt));
    const int d = static_cast<int>(std::llround(delta / dt));
    const int nf = n * refine, df = d * refine;
    const double h = dt / refine;
    std::vector<double> x(nf + df + 1, alpha0);  // index j = time (j - df) * h
    for (int j = df; j < nf + df; ++j) {
        const double lag = x[j - df];
        x[j + 1] = x[j] - lag * h;
    }
    std::vector<double> out(n + 1);
    for (int k = 0; k <= n; ++k) out[k] = x[df + k * refine];
    return out;
}

// y(t) = R + int_t^T y(min(s + delta, T)) ds with y = R beyond T, integrated
// backward by the method of steps on a refined grid.
inline std::vector<double> advanced_eval_bsde(double T, double dt, double delta, double R,
                                              int refine = 200) {
    const int n = static_cast<int>(std::llround(T / dt));
    const int d = static_cast<int>(std::llround(delta / dt));
    const int nf = n * refine, df = d * refine;
    const double h = dt / refine;
    std::vector<double> y(nf + df + 1, R);  // index j = time j * h, frozen beyond T
    for (int j = nf; j-- > 0;) {
        const int adv = std::min(j + df, nf);
        y[j] = y[j + 1] + y[adv] * h;
    }
    std::vector<double> out(n + 1);
    for (int k = 0; k <= n; ++k) out[k] = y[k * refine];
    return out;
}

// reflected deterministic value max(S, e^{-(T-t)} R) for F = -y
inline double reflected_exp_value(double t, double T, double R, double S) {
    return std::max(S, std::exp(-(T - t)) * R);
}

// high-resolution trapezoid of f over [-R, R]
inline double quad_highres(const std::function<double(double)>& f, double R, double dy) {
    const long long m = std::llround(R / dy);
    double acc = 0.0;
    for (long long j = -m; j <= m; ++j) {
        double v = f(dy * static_cast<double>(j));
        if (j == -m || j == m) v *= 0.5;
        acc += v;
    }
    return acc * dy;
}

}  // namespace oracles
