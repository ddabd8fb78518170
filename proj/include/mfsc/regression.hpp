#pragma once

#include <cmath>
#include <functional>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace mfsc {

// Least-squares conditional expectations on a polynomial basis of the
// cross-sectional state, rank-revealing so deterministic ensembles (constant
// cross-sections) degrade to plain averages. Optional rectified
// distance-to-barrier features for threshold-policy problems, where the value
// functions have a kink at the reflection barrier.
struct RegressionSpec {
    int degree = 3;
    double barrier_level = std::nan("");  // enable barrier features when finite
    double barrier_width = 1.0;           // scale of the rectified features
};

class Regressor {
  public:
    Regressor(std::span<const double> state, const RegressionSpec& spec);

    // fitted values of E[target | state] at every sample point
    std::vector<double> fit(std::span<const double> target) const;

    // the fitted conditional-expectation function itself, for evaluation away
    // from the training sample
    std::function<double(double)> fit_function(std::span<const double> target) const;

    std::size_t n_features() const { return p_; }
    std::size_t rank() const { return rank_; }

  private:
    std::size_t n_ = 0;
    std::size_t p_ = 0;
    std::size_t rank_ = 0;
    double mean_ = 0.0;
    double sd_ = 0.0;
    RegressionSpec spec_;
    std::vector<double> design_;   // n x p, row-major
    // opaque factorization handle (Eigen lives in the .cpp)
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

}  // namespace mfsc
