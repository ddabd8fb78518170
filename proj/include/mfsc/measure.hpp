#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "mfsc/errors.hpp"
#include "mfsc/grid.hpp"

namespace mfsc {

// Weighted atom list. A probability measure has weight sum 1; general finite
// measures are allowed (the Hilbert-space norm does not need normalization).
struct AtomicMeasure {
    std::vector<double> locations;
    std::vector<double> weights;

    static AtomicMeasure point_mass(double x) { return {{x}, {1.0}}; }
    static AtomicMeasure from_samples(std::span<const double> xs);

    std::size_t size() const { return locations.size(); }
    double total_mass() const;
    void validate() const;
};

// Fourier-side weight of the measure norm: rational (1+|y|)^-2 or gaussian
// e^{-y^2}, truncated composite-trapezoid quadrature on [-R, R].
struct FourierWeight {
    enum class Kind { rational, gaussian };
    Kind kind = Kind::rational;
    double R = 0.0;
    double dy = 0.0;

    // |mu-hat|^2 of a point mass never decays, so the rational tail 2/(1+R)
    // must sit well below the acceptance tolerance; hence the large default R.
    static FourierWeight rational() { return {Kind::rational, 20000.0, 0.05}; }
    static FourierWeight gaussian() { return {Kind::gaussian, 6.0, 0.01}; }

    double weight(double y) const {
        if (kind == Kind::rational) {
            const double u = 1.0 + std::abs(y);
            return 1.0 / (u * u);
        }
        return std::exp(-y * y);
    }
};

std::complex<double> char_fn(const AtomicMeasure& mu, double y);

struct QuadratureOptions {
    bool self_check = false;
    double self_check_tol = 1e-4;
};

// trapezoid of |mu-hat(y)|^2 w(y) over [-R, R]
double measure_norm_sq(const AtomicMeasure& mu, const FourierWeight& w,
                       const QuadratureOptions& opts = {});

// ||L(x1) - L(x2)||^2 for coupled equal-length samples (empirical laws)
double law_distance_sq(std::span<const double> x1, std::span<const double> x2,
                       const FourierWeight& w);

// 2-d joint-law version, atoms are pairs; used for the Lemma-style bound on
// joint laws with the gaussian weight e^{-y1^2 - y2^2}.
double joint_law_distance_sq(std::span<const double> x1a, std::span<const double> x2a,
                             std::span<const double> x1b, std::span<const double> x2b,
                             const FourierWeight& w);

// path segment of measures over offsets {0, dt, ..., delta}
struct MeasureSegment {
    std::vector<AtomicMeasure> measures;
    double dt = 0.0;

    std::size_t delay_steps() const { return measures.empty() ? 0 : measures.size() - 1; }
};

// trapezoid-in-s of measure_norm_sq over the segment; zero-delay segments
// integrate over an empty interval
double segment_norm_sq(const MeasureSegment& ms, const FourierWeight& w);

double segment_distance_sq(const MeasureSegment& a, const MeasureSegment& b,
                           const FourierWeight& w);

// First k raw moments of an atomic measure (k = 2 by default everywhere).
std::array<double, 2> raw_moments(const AtomicMeasure& mu);

class ParticleEnsemble;  // forward_sim

// d/dt of the first two raw moments of the empirical law, central difference
// with half-width `half_width_steps` grid steps.
std::array<double, 2> law_derivative(const ParticleEnsemble& ensemble, std::size_t t_index,
                                     std::size_t half_width_steps = 1);

}  // namespace mfsc
