#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mfsc/control_path.hpp"
#include "mfsc/errors.hpp"
#include "mfsc/grid.hpp"
#include "mfsc/grid_process.hpp"
#include "mfsc/measure.hpp"
#include "mfsc/segments.hpp"

namespace mfsc {

// First two raw moments of the empirical law; the law enters coefficients
// only through these coordinates.
struct LawMoments {
    double mu1 = 0.0;
    double mu2 = 0.0;
};

// Arguments handed to b and sigma at one (particle, step).
struct CoefContext {
    double t = 0.0;
    double x = 0.0;
    const MemorySegment* x_seg = nullptr;        // backward window of the path
    LawMoments law;                              // moments of M(t)
    std::span<const LawMoments> law_seg;         // moments of M(t-s), s = 0..delta
    double xi = 0.0;                             // xi(t) (cumulative)
};

using CoefFn = std::function<double(const CoefContext&)>;

struct CoefficientSpec {
    CoefFn b;                                   // defaults to 0
    CoefFn sigma;                               // defaults to 0
    std::function<double(double)> lambda;       // defaults to 0
    std::vector<double> alpha;                  // initial path on [-delta, 0], size delay_steps+1
    double lipschitz_b = 0.0;                   // user-declared constants (admissibility is
    double lipschitz_sigma = 0.0;               // not checkable in general)

    double eval_b(const CoefContext& c) const { return b ? b(c) : 0.0; }
    double eval_sigma(const CoefContext& c) const { return sigma ? sigma(c) : 0.0; }
    double eval_lambda(double t) const { return lambda ? lambda(t) : 0.0; }

    // sampled consistency of the declared Lipschitz constants in
    // (x, memory segment, law moments), segments in the grid sup norm
    void validate(const TimeGrid& grid, std::uint64_t seed = 19,
                  std::size_t n_samples = 500) const;
};

// N particle paths including the initial segment. Extended index j in
// [0, delay+n]: time (j - delay) * dt. Brownian increments are stored for the
// backward solvers.
class ParticleEnsemble {
  public:
    ParticleEnsemble() = default;
    ParticleEnsemble(const TimeGrid& grid, std::size_t n_particles);

    const TimeGrid& grid() const { return grid_; }
    std::size_t n_particles() const { return n_; }

    // state at grid step k (k = 0..n_steps)
    double x(std::size_t k, std::size_t i) const { return paths_.at(k + grid_.delay_steps, i); }
    double& x(std::size_t k, std::size_t i) { return paths_.at(k + grid_.delay_steps, i); }
    std::span<const double> states(std::size_t k) const {
        return paths_.row(k + grid_.delay_steps);
    }
    // raw storage access with extended index (0 = time -delta)
    double x_ext(std::size_t j, std::size_t i) const { return paths_.at(j, i); }
    double& x_ext(std::size_t j, std::size_t i) { return paths_.at(j, i); }

    double db(std::size_t k, std::size_t i) const { return db_.at(k, i); }
    double& db(std::size_t k, std::size_t i) { return db_.at(k, i); }
    std::span<const double> db_row(std::size_t k) const { return db_.row(k); }

    LawMoments law_moments(std::size_t k) const;

  private:
    TimeGrid grid_;
    std::size_t n_ = 0;
    GridProcess paths_;  // (delay+n_steps+1) x N
    GridProcess db_;     // n_steps x N
};

struct SimulateOptions {
    int threads = 1;
    // perturb increments at steps >= perturb_from by adding perturb_shift
    // (used by the adaptedness test); inactive by default
    std::size_t perturb_from = static_cast<std::size_t>(-1);
    double perturb_shift = 0.0;
};

// Explicit Euler with synchronous empirical-law coupling; the jump part
// lambda(t_k) * dxi_k lands at the end of step k, and a jump at t = 0 is
// applied to X(0) directly.
ParticleEnsemble simulate(const CoefficientSpec& spec, const ControlPaths& xi,
                          const TimeGrid& grid, std::size_t n_particles, std::uint64_t seed,
                          const SimulateOptions& opts = {});

ParticleEnsemble simulate(const CoefficientSpec& spec, const SingularControl& xi,
                          const TimeGrid& grid, std::size_t n_particles, std::uint64_t seed,
                          const SimulateOptions& opts = {});

AtomicMeasure empirical_law(const ParticleEnsemble& ensemble, std::size_t t_index);

MemorySegment memory_view(const ParticleEnsemble& ensemble, std::size_t particle,
                          std::size_t t_index);

}  // namespace mfsc
