#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajex {

enum class ErrorKind {
    InvalidArgument,
    NonFinite,
    SizeExceeded,
    NotConverged,
    DegenerateMatrix,
    IoError,
    FormatError,
    ShapeMismatch,
    MissingTarget,
    NonMonotonicSteps,
    SchemaMismatch,
    IndexOutOfRange,
    InsufficientCheckpoints,
    NonPositiveImprovement,
    DimensionMismatch,
    EmptyGroup,
    DivergedTraining,
    MissingPredictor,
    ZeroNormPrediction,
    EmptyTrajectory,
};

std::string_view to_string(ErrorKind kind) noexcept;

// All library failures are reported through this type; `kind()` is the
// machine-readable category, `what()` carries the human context.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace trajex
