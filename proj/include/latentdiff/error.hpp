#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentdiff {

enum class ErrorCode {
    ShapeMismatch,
    NonFiniteInput,
    NonFiniteResult,
    ZeroNorm,
    ArityMismatch,
    AffineViolation,
    ExtrapolationCap,
    StepOutOfRange,
    UnknownSite,
    LayerCountMismatch,
    EmptyPrompt,
    EmptyControlRef,
    BackendUnavailable,
    ValidationError,
    ParseError,
    SchemaError,
    IoError,
    BadResolution,
    BadThresholds,
    EmptySchedule,
    CaptionClientUnavailable,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library. `field()` carries a dotted path
/// (e.g. "concept_op.weights") when the error originates from a document.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string field = {});

    ErrorCode code() const noexcept { return code_; }
    const std::string& field() const noexcept { return field_; }
    const std::string& detail() const noexcept { return detail_; }

    /// Same error re-anchored under a parent path ("ops" + "weights" -> "ops.weights").
    Error with_field_prefix(std::string_view prefix) const;

private:
    ErrorCode code_;
    std::string field_;
    std::string detail_;
};

}  // namespace latentdiff
