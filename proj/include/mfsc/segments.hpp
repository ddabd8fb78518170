#pragma once

#include <cstddef>
#include <vector>

#include "mfsc/errors.hpp"
#include "mfsc/grid.hpp"

namespace mfsc {

// Backward window {X(t - s)}, s = 0, dt, ..., delta. values[j] = X(t - j*dt).
struct MemorySegment {
    std::vector<double> values;

    std::size_t delay_steps() const { return values.empty() ? 0 : values.size() - 1; }
    double at_offset(std::size_t j) const { return values.at(j); }
    // mean over the window, trapezoid weights; delta=0 degenerates to the point value
    double mean() const {
        if (values.size() == 1) return values[0];
        double s = 0.5 * (values.front() + values.back());
        for (std::size_t j = 1; j + 1 < values.size(); ++j) s += values[j];
        return s / static_cast<double>(values.size() - 1);
    }
};

// Forward window {Y(t + r)}, r = 0, dt, ..., delta. Entries at grid times
// beyond T hold the frozen terminal value (Y) or zero (Z).
struct AdvancedSegment {
    std::vector<double> values;

    std::size_t delay_steps() const { return values.empty() ? 0 : values.size() - 1; }
    double at_offset(std::size_t j) const { return values.at(j); }
};

}  // namespace mfsc
