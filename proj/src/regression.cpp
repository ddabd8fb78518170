#include "mfsc/regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <memory>

#include "mfsc/errors.hpp"

namespace mfsc {

struct Regressor::Impl {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
};

Regressor::Regressor(std::span<const double> state, const RegressionSpec& spec)
    : spec_(spec) {
    n_ = state.size();
    if (n_ == 0) throw RegressionSingular("no samples");

    double m = 0.0;
    for (double v : state) m += v;
    m /= static_cast<double>(n_);
    double var = 0.0;
    for (double v : state) var += (v - m) * (v - m);
    var /= static_cast<double>(n_);
    const double sd = std::sqrt(var);
    mean_ = m;
    sd_ = sd;

    const bool degenerate = sd < 1e-12;
    const bool barrier = std::isfinite(spec.barrier_level) && !degenerate;
    const int deg = degenerate ? 0 : std::max(0, spec.degree);
    p_ = static_cast<std::size_t>(deg + 1) + (barrier ? 2 : 0);

    design_.assign(n_ * p_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        double* row = design_.data() + i * p_;
        row[0] = 1.0;
        if (!degenerate) {
            const double u = (state[i] - m) / sd;
            double acc = 1.0;
            for (int j = 1; j <= deg; ++j) {
                acc *= u;
                row[j] = acc;
            }
            if (barrier) {
                const double d = std::min(
                    std::max(spec.barrier_level - state[i], 0.0) / spec.barrier_width, 3.0);
                row[deg + 1] = d;
                row[deg + 2] = d * d;
            }
        }
    }

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
        design_.data(), static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(p_));
    auto impl = std::make_shared<Impl>();
    impl->qr.compute(A);
    rank_ = static_cast<std::size_t>(impl->qr.rank());
    if (rank_ == 0) throw RegressionSingular("design matrix has rank 0");
    impl_ = impl;
}

std::function<double(double)> Regressor::fit_function(std::span<const double> target) const {
    if (target.size() != n_) throw RegressionSingular("target length mismatch");
    Eigen::Map<const Eigen::VectorXd> y(target.data(), static_cast<Eigen::Index>(n_));
    Eigen::VectorXd coef = impl_->qr.solve(y);
    std::vector<double> cv(coef.data(), coef.data() + coef.size());
    const double m = mean_, sd = sd_;
    const RegressionSpec spec = spec_;
    const std::size_t p = p_;
    const bool degenerate = sd < 1e-12;
    const bool barrier = std::isfinite(spec.barrier_level) && !degenerate;
    const int deg = degenerate ? 0 : std::max(0, spec.degree);
    return [=](double x) {
        double acc = cv[0];
        if (!degenerate) {
            const double u = (x - m) / sd;
            double pw = 1.0;
            for (int j = 1; j <= deg; ++j) {
                pw *= u;
                acc += cv[static_cast<std::size_t>(j)] * pw;
            }
            if (barrier && p >= static_cast<std::size_t>(deg) + 3) {
                const double d =
                    std::min(std::max(spec.barrier_level - x, 0.0) / spec.barrier_width, 3.0);
                acc += cv[static_cast<std::size_t>(deg) + 1] * d;
                acc += cv[static_cast<std::size_t>(deg) + 2] * d * d;
            }
        }
        return acc;
    };
}

std::vector<double> Regressor::fit(std::span<const double> target) const {
    if (target.size() != n_) throw RegressionSingular("target length mismatch");
    Eigen::Map<const Eigen::VectorXd> y(target.data(), static_cast<Eigen::Index>(n_));
    Eigen::VectorXd coef = impl_->qr.solve(y);
    std::vector<double> out(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        const double* row = design_.data() + i * p_;
        double acc = 0.0;
        for (std::size_t j = 0; j < p_; ++j) acc += row[j] * coef[static_cast<Eigen::Index>(j)];
        out[i] = acc;
    }
    return out;
}

}  // namespace mfsc
