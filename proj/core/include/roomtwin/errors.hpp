#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace twin {

// Base for all typed failures. code() is the stable machine-readable name.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg.empty() ? code : code + ": " + msg),
          code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

#define TWIN_ERROR_TYPE(Name)                             \
    class Name : public Error {                           \
    public:                                               \
        explicit Name(const std::string& msg = "")        \
            : Error(#Name, msg) {}                        \
    };

// geom
TWIN_ERROR_TYPE(BehindCamera)
TWIN_ERROR_TYPE(DegenerateGeometry)
TWIN_ERROR_TYPE(DegenerateInput)
TWIN_ERROR_TYPE(EmptyCloud)

// io
TWIN_ERROR_TYPE(MalformedHeader)
TWIN_ERROR_TYPE(PropertyMismatch)
TWIN_ERROR_TYPE(TruncatedBody)
TWIN_ERROR_TYPE(BadMagic)
TWIN_ERROR_TYPE(BadScale)
TWIN_ERROR_TYPE(SizeMismatch)
TWIN_ERROR_TYPE(BadMaxval)
TWIN_ERROR_TYPE(NonMonotonicTime)
TWIN_ERROR_TYPE(BadFieldCount)
TWIN_ERROR_TYPE(NonFiniteValue)
TWIN_ERROR_TYPE(SchemaViolation)

// calibration
TWIN_ERROR_TYPE(NoConsistentLabeling)
TWIN_ERROR_TYPE(AmbiguousLabeling)
TWIN_ERROR_TYPE(CollinearPoints)
TWIN_ERROR_TYPE(NoRealSolution)
TWIN_ERROR_TYPE(TooFewPoints)
TWIN_ERROR_TYPE(CoplanarPoints)
TWIN_ERROR_TYPE(IllConditioned)
TWIN_ERROR_TYPE(InsufficientOverlap)
TWIN_ERROR_TYPE(BootstrapFailed)
TWIN_ERROR_TYPE(DivergedOptimization)
TWIN_ERROR_TYPE(NonFiniteResidual)

// tracking
TWIN_ERROR_TYPE(InsufficientViews)
TWIN_ERROR_TYPE(TrackTooShort)

// registration
TWIN_ERROR_TYPE(DimensionMismatch)
TWIN_ERROR_TYPE(EmptyFusion)
TWIN_ERROR_TYPE(NoCorrespondences)
TWIN_ERROR_TYPE(NoAcceptableModel)
TWIN_ERROR_TYPE(NoOverlap)
TWIN_ERROR_TYPE(NonFiniteUpdate)

// metrics
TWIN_ERROR_TYPE(NoCommonValidJoints)
TWIN_ERROR_TYPE(NoEvaluableLimbs)
TWIN_ERROR_TYPE(InsufficientMatches)
TWIN_ERROR_TYPE(TrajectoryTooShort)
TWIN_ERROR_TYPE(NoValidPixels)

// simulator
TWIN_ERROR_TYPE(BadConfig)
TWIN_ERROR_TYPE(WandNeverVisible)
TWIN_ERROR_TYPE(CircleOutsideRoom)

#undef TWIN_ERROR_TYPE

}  // namespace twin
