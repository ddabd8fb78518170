#include "mfsc/rbsde.hpp"

#include <algorithm>
#include <cmath>

#include "mfsc/rng.hpp"

namespace mfsc {

void DriverSpec::validate(const TimeGrid& grid, std::uint64_t seed,
                          std::size_t n_samples) const {
    if (!F) return;
    const std::size_t d = grid.delay_steps;
    std::vector<double> zero_seg(d + 1, 0.0);
    auto u = [&](std::uint64_t a, std::uint64_t b) {
        return 2.0 * RngStream::uniform(RngStream::key(seed, a, b, 13)) - 1.0;
    };
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double t = grid.T * RngStream::uniform(RngStream::key(seed, s, 0, 13));
        DriverContext z;
        z.t = t;
        z.y_adv = zero_seg;
        z.z_adv = zero_seg;
        if (std::abs(eval(z)) > zero_bound + 1e-9)
            throw OutOfRange("driver exceeds its declared bound at (t, 0, ..., L(0,0))");

        DriverContext a = z, b = z;
        std::vector<double> ya(d + 1), za(d + 1), yb(d + 1), zb(d + 1);
        double sup_y = 0.0, sup_z = 0.0;
        for (std::size_t j = 0; j <= d; ++j) {
            ya[j] = u(s, 1 + j);
            za[j] = u(s, 100 + j);
            yb[j] = u(s, 200 + j);
            zb[j] = u(s, 300 + j);
            sup_y = std::max(sup_y, std::abs(ya[j] - yb[j]));
            sup_z = std::max(sup_z, std::abs(za[j] - zb[j]));
        }
        a.y = u(s, 400);
        b.y = u(s, 401);
        a.z = u(s, 402);
        b.z = u(s, 403);
        a.y_adv = ya;
        a.z_adv = za;
        b.y_adv = yb;
        b.z_adv = zb;
        a.law = {u(s, 404), std::abs(u(s, 405)), u(s, 406), std::abs(u(s, 407))};
        b.law = {u(s, 408), std::abs(u(s, 409)), u(s, 410), std::abs(u(s, 411))};
        const double df = eval(a) - eval(b);
        const double dy = a.y - b.y, dz = a.z - b.z;
        const double dl = std::max({std::abs(a.law.y_mean - b.law.y_mean),
                                    std::abs(a.law.y_sq - b.law.y_sq),
                                    std::abs(a.law.z_mean - b.law.z_mean),
                                    std::abs(a.law.z_sq - b.law.z_sq)});
        const double rhs_sq = dy * dy + dz * dz + sup_y * sup_y + sup_z * sup_z + dl * dl;
        if (df * df > lipschitz_c * lipschitz_c * rhs_sq + 1e-9)
            throw OutOfRange("driver violates its declared Lipschitz constant");
    }
}

void BarrierSpec::validate(bool unsafe_barrier) const {
    const std::size_t n_times = S.n_times();
    const std::size_t N = S.n_particles();
    if (R.size() != N) throw BarrierViolation("terminal R size mismatch");
    for (std::size_t i = 0; i < N; ++i)
        if (R[i] < S.at(n_times - 1, i) - 1e-12)
            throw BarrierViolation("R < S(T) on some path");
    if (unsafe_barrier) return;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k + 1 < n_times; ++k)
            if (S.at(k + 1, i) < S.at(k, i) - 1e-12)
                throw BarrierViolation(
                    "barrier decreases in t (pass unsafe_barrier to allow)");
}

BarrierSpec make_barrier(const ParticleEnsemble& ens,
                         const std::function<double(double, double)>& S_fn,
                         const std::function<double(double)>& R_fn) {
    const auto& g = ens.grid();
    BarrierSpec b;
    b.S = GridProcess(g.n_steps + 1, ens.n_particles());
    b.R.resize(ens.n_particles());
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        for (std::size_t i = 0; i < ens.n_particles(); ++i)
            b.S.at(k, i) = S_fn(g.time(k), ens.x(k, i));
    for (std::size_t i = 0; i < ens.n_particles(); ++i) b.R[i] = R_fn(ens.x(g.n_steps, i));
    return b;
}

namespace {

RbsdeSolution zero_solution(const TimeGrid& grid, std::size_t N) {
    RbsdeSolution s;
    s.Y = GridProcess(grid.n_extended(), N, 0.0);
    s.Z = GridProcess(grid.n_extended(), N, 0.0);
    s.K = GridProcess(grid.n_steps + 1, N, 0.0);
    s.F_used = GridProcess(grid.n_steps, N, 0.0);
    return s;
}

PathLawMoments window_law(const RbsdeSolution& prev, std::size_t k, std::size_t d,
                          std::size_t N) {
    PathLawMoments law;
    const double inv = 1.0 / static_cast<double>((d + 1) * N);
    for (std::size_t j = 0; j <= d; ++j) {
        const auto yr = prev.Y.row(k + j);
        const auto zr = prev.Z.row(k + j);
        for (std::size_t i = 0; i < N; ++i) {
            law.y_mean += yr[i];
            law.y_sq += yr[i] * yr[i];
            law.z_mean += zr[i];
            law.z_sq += zr[i] * zr[i];
        }
    }
    law.y_mean *= inv;
    law.y_sq *= inv;
    law.z_mean *= inv;
    law.z_sq *= inv;
    return law;
}

}  // namespace

RbsdeSolution backward_sweep(const DriverSpec& driver, const BarrierSpec& barrier,
                             const RbsdeSolution& prev, const ParticleEnsemble& ensemble,
                             const TimeGrid& grid, const RbsdeOptions& opts) {
    barrier.validate(opts.unsafe_barrier);
    const std::size_t N = ensemble.n_particles();
    const std::size_t n = grid.n_steps;
    const std::size_t d = grid.delay_steps;

    RbsdeSolution out = zero_solution(grid, N);
    // terminal condition and frozen region: Y = R at/after T, Z = 0 after T
    for (std::size_t j = n; j < grid.n_extended(); ++j)
        for (std::size_t i = 0; i < N; ++i) out.Y.at(j, i) = barrier.R[i];

    std::vector<double> ytil(N), target(N);
    std::vector<std::vector<double>> adv_y(d + 1), adv_z(d + 1);

    for (std::size_t k = n; k-- > 0;) {
        const Regressor reg(ensemble.states(k), opts.regression);

        // continuation and martingale density from the current sweep
        const std::vector<double> cont = reg.fit(out.Y.row(k + 1));
        for (std::size_t i = 0; i < N; ++i)
            target[i] = (out.Y.at(k + 1, i) - cont[i]) * ensemble.db(k, i) / grid.dt;
        const std::vector<double> zfit = reg.fit(target);

        // advanced terms from the previous Picard iterate, conditioned on
        // time-k features; offset 0 is already F_k-measurable
        for (std::size_t j = 0; j <= d; ++j) {
            if (j == 0) {
                adv_y[0].assign(prev.Y.row(k).begin(), prev.Y.row(k).end());
                adv_z[0].assign(prev.Z.row(k).begin(), prev.Z.row(k).end());
            } else {
                adv_y[j] = reg.fit(prev.Y.row(k + j));
                adv_z[j] = reg.fit(prev.Z.row(k + j));
            }
        }
        const PathLawMoments law = window_law(prev, k, d, N);

        const double t = grid.time(k);
        std::vector<double> yadv_i(d + 1), zadv_i(d + 1);
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j <= d; ++j) {
                yadv_i[j] = adv_y[j][i];
                zadv_i[j] = adv_z[j][i];
            }
            DriverContext c;
            c.t = t;
            c.y = cont[i];
            c.z = zfit[i];
            c.y_adv = yadv_i;
            c.z_adv = zadv_i;
            c.law = law;
            const double f = driver.eval(c);
            out.F_used.at(k, i) = f;
            ytil[i] = cont[i] + f * grid.dt;
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double s = barrier.S.at(k, i);
            double yk, dk;
            if (opts.penalization) {
                dk = opts.penalty * std::max(s - ytil[i], 0.0) * grid.dt;
                yk = ytil[i] + dk;
            } else {
                yk = std::max(ytil[i], s);
                dk = yk - ytil[i];
            }
            out.Y.at(k, i) = yk;
            out.Z.at(k, i) = zfit[i];
            out.K.at(k, i) = dk;  // temporarily the increment; cumulated below
        }
    }
    // K increment at T is zero (Y(T) = R >= S(T) is validated); cumulate
    std::vector<double> run(N, 0.0);
    for (std::size_t k = 0; k <= n; ++k)
        for (std::size_t i = 0; i < N; ++i) {
            run[i] += (k < n) ? out.K.at(k, i) : 0.0;
            out.K.at(k, i) = run[i];
        }
    return out;
}

double h_beta_norm(const GridProcess& Y, const GridProcess& Z, double beta,
                   const TimeGrid& grid) {
    const std::size_t N = Y.n_particles();
    const std::size_t last = grid.n_extended() - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k <= last; ++k) {
        const double w = (k == 0 || k == last) ? 0.5 : 1.0;
        const double e = std::exp(beta * grid.time(k));
        const auto yr = Y.row(k);
        const auto zr = Z.row(k);
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += yr[i] * yr[i] + zr[i] * zr[i];
        acc += w * e * s;
    }
    return acc * grid.dt / static_cast<double>(N);
}

namespace {
double diff_norm(const RbsdeSolution& a, const RbsdeSolution& b, double beta,
                 const TimeGrid& grid) {
    GridProcess dy(a.Y.n_times(), a.Y.n_particles());
    GridProcess dz(a.Z.n_times(), a.Z.n_particles());
    for (std::size_t k = 0; k < a.Y.n_times(); ++k)
        for (std::size_t i = 0; i < a.Y.n_particles(); ++i) {
            dy.at(k, i) = a.Y.at(k, i) - b.Y.at(k, i);
            dz.at(k, i) = a.Z.at(k, i) - b.Z.at(k, i);
        }
    return h_beta_norm(dy, dz, beta, grid);
}
}  // namespace

RbsdeSolution solve_picard(const DriverSpec& driver, const BarrierSpec& barrier,
                           const ParticleEnsemble& ensemble, const TimeGrid& grid,
                           const RbsdeOptions& opts) {
    if (!(opts.rho > 1.0)) throw OutOfRange("solve_picard: rho must exceed 1");
    const double beta = 1.0 + 8.0 * opts.rho * driver.lipschitz_c * driver.lipschitz_c;

    RbsdeSolution prev = zero_solution(grid, ensemble.n_particles());
    RbsdeSolution cur;
    std::vector<double> norms;
    double last_ratio = 0.0;
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        cur = backward_sweep(driver, barrier, prev, ensemble, grid, opts);
        const double dn = diff_norm(cur, prev, beta, grid);
        if (!norms.empty() && norms.back() > 0.0) last_ratio = dn / norms.back();
        norms.push_back(dn);
        prev = std::move(cur);
        if (dn <= opts.tol) {
            prev.picard_norms = norms;
            return prev;
        }
    }
    if (last_ratio >= 1.0)
        throw NoConvergence("solve_picard: ratio " + std::to_string(last_ratio) +
                            " at max_iter (check the declared Lipschitz constant)");
    prev.picard_norms = norms;
    return prev;
}

AdvancedSegment advanced_view(const GridProcess& p, std::size_t particle, std::size_t t_index,
                              const TimeGrid& grid) {
    if (particle >= p.n_particles() || t_index + grid.delay_steps >= p.n_times())
        throw OutOfRange("advanced_view: window leaves the stored horizon");
    AdvancedSegment seg;
    seg.values.resize(grid.delay_steps + 1);
    for (std::size_t r = 0; r <= grid.delay_steps; ++r)
        seg.values[r] = p.at(t_index + r, particle);
    return seg;
}

double skorokhod_residual(const RbsdeSolution& sol, const BarrierSpec& barrier) {
    const std::size_t N = sol.K.n_particles();
    const std::size_t n = sol.K.n_times() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double prev = 0.0;
        for (std::size_t k = 0; k <= n; ++k) {
            const double dk = sol.K.at(k, i) - prev;
            prev = sol.K.at(k, i);
            acc += (sol.Y.at(k, i) - barrier.S.at(k, i)) * dk;
        }
    }
    return acc / static_cast<double>(N);
}

}  // namespace mfsc
