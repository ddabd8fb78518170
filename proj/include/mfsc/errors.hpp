#pragma once

#include <stdexcept>
#include <string>

namespace mfsc {

// Base for all toolkit errors so callers can catch one type at the CLI edge.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MFSC_DEFINE_ERROR(NAME)                              \
    struct NAME : Error {                                    \
        explicit NAME(const std::string& msg) : Error(std::string(#NAME) + ": " + msg) {} \
    }

MFSC_DEFINE_ERROR(NonCommensurate);
MFSC_DEFINE_ERROR(OutOfRange);
MFSC_DEFINE_ERROR(EmptySample);
MFSC_DEFINE_ERROR(QuadratureUnderResolved);
MFSC_DEFINE_ERROR(BoundaryIndex);
MFSC_DEFINE_ERROR(NonFinite);
MFSC_DEFINE_ERROR(RegressionSingular);
MFSC_DEFINE_ERROR(BarrierViolation);
MFSC_DEFINE_ERROR(NoConvergence);
MFSC_DEFINE_ERROR(NotMarkovReducible);
MFSC_DEFINE_ERROR(OffsetOutOfRange);
MFSC_DEFINE_ERROR(InadmissiblePerturbation);
MFSC_DEFINE_ERROR(NotConcave);
MFSC_DEFINE_ERROR(LambdaNotConstantNegative);
MFSC_DEFINE_ERROR(ConfigParse);
MFSC_DEFINE_ERROR(UnknownExperiment);

#undef MFSC_DEFINE_ERROR

}  // namespace mfsc
