#include "mfsc/measure.hpp"

#include <cmath>
#include <numbers>

#include "mfsc/forward.hpp"

namespace mfsc {

AtomicMeasure AtomicMeasure::from_samples(std::span<const double> xs) {
    if (xs.empty()) throw EmptySample("from_samples: no atoms");
    AtomicMeasure m;
    m.locations.assign(xs.begin(), xs.end());
    m.weights.assign(xs.size(), 1.0 / static_cast<double>(xs.size()));
    return m;
}

double AtomicMeasure::total_mass() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

void AtomicMeasure::validate() const {
    if (locations.size() != weights.size())
        throw OutOfRange("AtomicMeasure: locations/weights length mismatch");
    for (double w : weights)
        if (w < 0.0) throw OutOfRange("AtomicMeasure: negative weight");
}

std::complex<double> char_fn(const AtomicMeasure& mu, double y) {
    double re = 0.0, im = 0.0;
    for (std::size_t k = 0; k < mu.locations.size(); ++k) {
        const double a = mu.locations[k] * y;
        re += mu.weights[k] * std::cos(a);
        im -= mu.weights[k] * std::sin(a);
    }
    return {re, im};
}

namespace {

// antiderivative of the weight (for exact per-cell masses)
double weight_primitive(const FourierWeight& w, double y) {
    if (w.kind == FourierWeight::Kind::rational) {
        // d/dy [ sign(y) (1 - 1/(1+|y|)) ] = (1+|y|)^-2
        const double v = 1.0 - 1.0 / (1.0 + std::abs(y));
        return y >= 0.0 ? v : -v;
    }
    return 0.5 * std::sqrt(std::numbers::pi) * std::erf(y);
}

// node coefficients of the product rule: |mu-hat|^2 piecewise linear between
// nodes, the weight integrated exactly on each cell
std::vector<double> node_weights(const FourierWeight& w, double R, double dy) {
    const std::size_t m = static_cast<std::size_t>(std::llround(R / dy));
    const std::size_t nodes = 2 * m + 1;
    std::vector<double> coeff(nodes, 0.0);
    double prev = weight_primitive(w, -R);
    for (std::size_t j = 0; j + 1 < nodes; ++j) {
        const double yr = -R + dy * static_cast<double>(j + 1);
        const double cur = weight_primitive(w, yr);
        const double cell = cur - prev;
        coeff[j] += 0.5 * cell;
        coeff[j + 1] += 0.5 * cell;
        prev = cur;
    }
    return coeff;
}

// |mu1-hat - mu2-hat|^2 against the weight on [-R, R]; mu2 may be null
double quad_norm(const AtomicMeasure& a, const AtomicMeasure* b, const FourierWeight& w,
                 double R, double dy) {
    const std::vector<double> coeff = node_weights(w, R, dy);
    double acc = 0.0;
    for (std::size_t j = 0; j < coeff.size(); ++j) {
        const double y = -R + dy * static_cast<double>(j);
        std::complex<double> c = char_fn(a, y);
        if (b) c -= char_fn(*b, y);
        acc += coeff[j] * std::norm(c);
    }
    return acc;
}

}  // namespace

double measure_norm_sq(const AtomicMeasure& mu, const FourierWeight& w,
                       const QuadratureOptions& opts) {
    mu.validate();
    if (!(w.R > 0.0) || !(w.dy > 0.0)) throw OutOfRange("measure_norm_sq: bad quadrature");
    const double v = quad_norm(mu, nullptr, w, w.R, w.dy);
    if (opts.self_check) {
        const double v2 = quad_norm(mu, nullptr, w, 2.0 * w.R, 0.5 * w.dy);
        if (std::abs(v2 - v) > opts.self_check_tol)
            throw QuadratureUnderResolved("measure_norm_sq self-check moved by " +
                                          std::to_string(std::abs(v2 - v)));
    }
    return v;
}

double law_distance_sq(std::span<const double> x1, std::span<const double> x2,
                       const FourierWeight& w) {
    if (x1.empty() || x2.empty()) throw EmptySample("law_distance_sq: empty sample");
    if (x1.size() != x2.size())
        throw OutOfRange("law_distance_sq: samples must be paired (equal length)");
    const AtomicMeasure a = AtomicMeasure::from_samples(x1);
    const AtomicMeasure b = AtomicMeasure::from_samples(x2);
    return quad_norm(a, &b, w, w.R, w.dy);
}

double joint_law_distance_sq(std::span<const double> x1a, std::span<const double> x2a,
                             std::span<const double> x1b, std::span<const double> x2b,
                             const FourierWeight& w) {
    if (x1a.empty()) throw EmptySample("joint_law_distance_sq: empty sample");
    if (x1a.size() != x2a.size() || x1b.size() != x2b.size() || x1a.size() != x1b.size())
        throw OutOfRange("joint_law_distance_sq: samples must be paired");
    const std::size_t n = x1a.size();
    const double inv = 1.0 / static_cast<double>(n);
    const std::size_t m = static_cast<std::size_t>(std::llround(w.R / w.dy));
    const std::size_t nodes = 2 * m + 1;

    // separable evaluation: per-sample phase vectors over y1 and y2
    std::vector<std::complex<double>> e1a(n * nodes), e1b(n * nodes), e2a(n * nodes),
        e2b(n * nodes);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < nodes; ++j) {
            const double y = -w.R + w.dy * static_cast<double>(j);
            e1a[s * nodes + j] = std::polar(1.0, -x1a[s] * y);
            e1b[s * nodes + j] = std::polar(1.0, -x1b[s] * y);
            e2a[s * nodes + j] = std::polar(1.0, -x2a[s] * y);
            e2b[s * nodes + j] = std::polar(1.0, -x2b[s] * y);
        }
    const std::vector<double> coeff = node_weights(w, w.R, w.dy);
    double acc = 0.0;
    for (std::size_t j1 = 0; j1 < nodes; ++j1) {
        for (std::size_t j2 = 0; j2 < nodes; ++j2) {
            std::complex<double> c{0.0, 0.0};
            for (std::size_t s = 0; s < n; ++s)
                c += e1a[s * nodes + j1] * e1b[s * nodes + j2] -
                     e2a[s * nodes + j1] * e2b[s * nodes + j2];
            acc += coeff[j1] * coeff[j2] * std::norm(c * inv);
        }
    }
    return acc;
}

double segment_norm_sq(const MeasureSegment& ms, const FourierWeight& w) {
    if (ms.measures.empty() || ms.delay_steps() == 0) return 0.0;
    double acc = 0.0;
    const std::size_t last = ms.measures.size() - 1;
    for (std::size_t j = 0; j <= last; ++j) {
        double v = measure_norm_sq(ms.measures[j], w);
        if (j == 0 || j == last) v *= 0.5;
        acc += v;
    }
    return acc * ms.dt;
}

double segment_distance_sq(const MeasureSegment& a, const MeasureSegment& b,
                           const FourierWeight& w) {
    if (a.measures.size() != b.measures.size())
        throw OutOfRange("segment_distance_sq: segment length mismatch");
    if (a.measures.empty() || a.delay_steps() == 0) return 0.0;
    double acc = 0.0;
    const std::size_t last = a.measures.size() - 1;
    for (std::size_t j = 0; j <= last; ++j) {
        double v = quad_norm(a.measures[j], &b.measures[j], w, w.R, w.dy);
        if (j == 0 || j == last) v *= 0.5;
        acc += v;
    }
    return acc * a.dt;
}

std::array<double, 2> raw_moments(const AtomicMeasure& mu) {
    double m1 = 0.0, m2 = 0.0, mass = 0.0;
    for (std::size_t k = 0; k < mu.locations.size(); ++k) {
        m1 += mu.weights[k] * mu.locations[k];
        m2 += mu.weights[k] * mu.locations[k] * mu.locations[k];
        mass += mu.weights[k];
    }
    if (mass > 0.0) {
        m1 /= mass;
        m2 /= mass;
    }
    return {m1, m2};
}

std::array<double, 2> law_derivative(const ParticleEnsemble& ensemble, std::size_t t_index,
                                     std::size_t half_width_steps) {
    const std::size_t n = ensemble.grid().n_steps;
    const std::size_t h = half_width_steps;
    if (h == 0 || t_index < h || t_index + h > n)
        throw BoundaryIndex("law_derivative: stencil leaves the grid");
    const LawMoments lo = ensemble.law_moments(t_index - h);
    const LawMoments hi = ensemble.law_moments(t_index + h);
    const double span = 2.0 * ensemble.grid().dt * static_cast<double>(h);
    return {(hi.mu1 - lo.mu1) / span, (hi.mu2 - lo.mu2) / span};
}

}  // namespace mfsc
