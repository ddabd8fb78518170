#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mfsc {

// Dense (time x particle) array, time-major so each cross-section is contiguous.
class GridProcess {
  public:
    GridProcess() = default;
    GridProcess(std::size_t n_times, std::size_t n_particles, double fill = 0.0)
        : n_times_(n_times), n_particles_(n_particles), v_(n_times * n_particles, fill) {}

    std::size_t n_times() const { return n_times_; }
    std::size_t n_particles() const { return n_particles_; }

    double& at(std::size_t k, std::size_t i) { return v_[k * n_particles_ + i]; }
    double at(std::size_t k, std::size_t i) const { return v_[k * n_particles_ + i]; }

    std::span<double> row(std::size_t k) { return {v_.data() + k * n_particles_, n_particles_}; }
    std::span<const double> row(std::size_t k) const {
        return {v_.data() + k * n_particles_, n_particles_};
    }

    const std::vector<double>& data() const { return v_; }
    std::vector<double>& data() { return v_; }

  private:
    std::size_t n_times_ = 0;
    std::size_t n_particles_ = 0;
    std::vector<double> v_;
};

inline double mean_of(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double variance_of(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size());
}

inline double stderr_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return std::sqrt(variance_of(xs) / static_cast<double>(xs.size()));
}

}  // namespace mfsc
