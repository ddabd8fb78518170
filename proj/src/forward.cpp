#include "mfsc/forward.hpp"

#include <cmath>

#include "mfsc/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfsc {

namespace {
bool b_fn_violates(double df, double declared, double arg) {
    return std::abs(df) > declared * arg + 1e-9;
}
}  // namespace

ParticleEnsemble::ParticleEnsemble(const TimeGrid& grid, std::size_t n_particles)
    : grid_(grid),
      n_(n_particles),
      paths_(grid.delay_steps + grid.n_steps + 1, n_particles, 0.0),
      db_(grid.n_steps, n_particles, 0.0) {}

LawMoments ParticleEnsemble::law_moments(std::size_t k) const {
    // fixed-order serial reduction: result independent of thread count
    double m1 = 0.0, m2 = 0.0;
    const auto xs = states(k);
    for (double v : xs) {
        m1 += v;
        m2 += v * v;
    }
    const double inv = n_ ? 1.0 / static_cast<double>(n_) : 0.0;
    return {m1 * inv, m2 * inv};
}

void CoefficientSpec::validate(const TimeGrid& grid, std::uint64_t seed,
                               std::size_t n_samples) const {
    const std::size_t d = grid.delay_steps;
    auto u = [&](std::uint64_t a, std::uint64_t b) {
        return 2.0 * RngStream::uniform(RngStream::key(seed, a, b, 14)) - 1.0;
    };
    for (std::size_t s = 0; s < n_samples; ++s) {
        MemorySegment sa, sb;
        sa.values.resize(d + 1);
        sb.values.resize(d + 1);
        double sup = 0.0;
        for (std::size_t j = 0; j <= d; ++j) {
            sa.values[j] = u(s, j);
            sb.values[j] = u(s, 50 + j);
            sup = std::max(sup, std::abs(sa.values[j] - sb.values[j]));
        }
        std::vector<LawMoments> seg_a(d + 1), seg_b(d + 1);
        for (std::size_t j = 0; j <= d; ++j) {
            seg_a[j] = {u(s, 100 + j), std::abs(u(s, 150 + j))};
            seg_b[j] = {u(s, 200 + j), std::abs(u(s, 250 + j))};
        }
        CoefContext a, b;
        a.t = b.t = grid.T * RngStream::uniform(RngStream::key(seed, s, 300, 14));
        a.x = u(s, 301);
        b.x = u(s, 302);
        a.x_seg = &sa;
        b.x_seg = &sb;
        a.law = seg_a[0];
        b.law = seg_b[0];
        a.law_seg = seg_a;
        b.law_seg = seg_b;
        a.xi = b.xi = std::abs(u(s, 303));
        const double dl = std::max(std::abs(a.law.mu1 - b.law.mu1),
                                   std::abs(a.law.mu2 - b.law.mu2));
        const double arg = std::abs(a.x - b.x) + sup + dl;
        if (b_fn_violates(eval_b(a) - eval_b(b), lipschitz_b, arg))
            throw OutOfRange("drift violates its declared Lipschitz constant");
        if (b_fn_violates(eval_sigma(a) - eval_sigma(b), lipschitz_sigma, arg))
            throw OutOfRange("diffusion violates its declared Lipschitz constant");
    }
}

ParticleEnsemble simulate(const CoefficientSpec& spec, const ControlPaths& xi,
                          const TimeGrid& grid, std::size_t n_particles, std::uint64_t seed,
                          const SimulateOptions& opts) {
    if (xi.cum.n_times() != grid.n_steps + 1 || xi.cum.n_particles() != n_particles)
        throw OutOfRange("simulate: control paths do not match grid/particles");
    if (spec.alpha.size() != grid.delay_steps + 1)
        throw OutOfRange("simulate: alpha must have delay_steps+1 values");

    ParticleEnsemble ens(grid, n_particles);
    const std::size_t d = grid.delay_steps;
    const double sq = std::sqrt(grid.dt);

    // initial path alpha on [-delta, 0]; jump at t=0 lands in X(0)
    const double lam0 = spec.eval_lambda(0.0);
    for (std::size_t i = 0; i < n_particles; ++i) {
        for (std::size_t j = 0; j <= d; ++j) ens.x_ext(j, i) = spec.alpha[j];
        ens.x_ext(d, i) += lam0 * xi.initial_jump(i);
    }
    // pre-draw increments (counter-based; optional future-perturbation hook)
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
#ifdef _OPENMP
#pragma omp parallel for num_threads(opts.threads) schedule(static)
#endif
        for (long long ii = 0; ii < static_cast<long long>(n_particles); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            double z = sq * RngStream::normal(seed, i, k, RngStream::kBrownian);
            if (k >= opts.perturb_from) z += opts.perturb_shift;
            ens.db(k, i) = z;
        }
    }

    std::vector<LawMoments> law_seg(d + 1);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        // synchronous law: every particle sees the same empirical moments,
        // including the segment (law at offsets s = 0..delta; times below 0
        // read the initial-path cross-section, which is deterministic alpha)
        for (std::size_t j = 0; j <= d; ++j) {
            if (k >= j) {
                law_seg[j] = ens.law_moments(k - j);
            } else {
                const double a = spec.alpha[d - (j - k)];
                law_seg[j] = {a, a * a};
            }
        }
        const LawMoments law = law_seg[0];
        const double t = grid.time(k);
        const double lam = spec.eval_lambda(t);
        bool bad = false;
#ifdef _OPENMP
#pragma omp parallel for num_threads(opts.threads) schedule(static)
#endif
        for (long long ii = 0; ii < static_cast<long long>(n_particles); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            MemorySegment seg = memory_view(ens, i, k);
            CoefContext c;
            c.t = t;
            c.x = ens.x(k, i);
            c.x_seg = &seg;
            c.law = law;
            c.law_seg = law_seg;
            c.xi = xi.cum.at(k, i);
            const double drift = spec.eval_b(c);
            const double diff = spec.eval_sigma(c);
            const double nx =
                c.x + drift * grid.dt + diff * ens.db(k, i) + lam * xi.increment(k, i);
            ens.x(k + 1, i) = nx;
            if (!std::isfinite(nx)) bad = true;
        }
        if (bad) throw NonFinite("simulate: state blew up at step " + std::to_string(k));
    }
    return ens;
}

ParticleEnsemble simulate(const CoefficientSpec& spec, const SingularControl& xi,
                          const TimeGrid& grid, std::size_t n_particles, std::uint64_t seed,
                          const SimulateOptions& opts) {
    return simulate(spec, broadcast_control(xi, grid, n_particles), grid, n_particles, seed,
                    opts);
}

AtomicMeasure empirical_law(const ParticleEnsemble& ensemble, std::size_t t_index) {
    if (t_index > ensemble.grid().n_steps) throw OutOfRange("empirical_law: bad index");
    const auto xs = ensemble.states(t_index);
    return AtomicMeasure::from_samples(xs);
}

MemorySegment memory_view(const ParticleEnsemble& ensemble, std::size_t particle,
                          std::size_t t_index) {
    const auto& g = ensemble.grid();
    if (particle >= ensemble.n_particles() || t_index > g.n_steps)
        throw OutOfRange("memory_view: bad indices");
    MemorySegment seg;
    seg.values.resize(g.delay_steps + 1);
    // ext index of time t_index is delay+t_index; offset j reads delay+t_index-j >= 0
    for (std::size_t j = 0; j <= g.delay_steps; ++j)
        seg.values[j] = ensemble.x_ext(g.delay_steps + t_index - j, particle);
    return seg;
}

}  // namespace mfsc
