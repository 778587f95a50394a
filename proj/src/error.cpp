#include "latentdiff/error.hpp"

namespace latentdiff {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::NonFiniteResult: return "NonFiniteResult";
        case ErrorCode::ZeroNorm: return "ZeroNorm";
        case ErrorCode::ArityMismatch: return "ArityMismatch";
        case ErrorCode::AffineViolation: return "AffineViolation";
        case ErrorCode::ExtrapolationCap: return "ExtrapolationCap";
        case ErrorCode::StepOutOfRange: return "StepOutOfRange";
        case ErrorCode::UnknownSite: return "UnknownSite";
        case ErrorCode::LayerCountMismatch: return "LayerCountMismatch";
        case ErrorCode::EmptyPrompt: return "EmptyPrompt";
        case ErrorCode::EmptyControlRef: return "EmptyControlRef";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::ValidationError: return "ValidationError";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::BadResolution: return "BadResolution";
        case ErrorCode::BadThresholds: return "BadThresholds";
        case ErrorCode::EmptySchedule: return "EmptySchedule";
        case ErrorCode::CaptionClientUnavailable: return "CaptionClientUnavailable";
    }
    return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& message, const std::string& field) {
    std::string out(to_string(code));
    if (!field.empty()) out += " at '" + field + "'";
    if (!message.empty()) out += ": " + message;
    return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message, std::string field)
    : std::runtime_error(compose(code, message, field)),
      code_(code),
      field_(std::move(field)),
      detail_(message) {}

Error Error::with_field_prefix(std::string_view prefix) const {
    std::string path(prefix);
    if (!field_.empty()) {
        if (!path.empty() && field_.front() != '[') path += '.';
        path += field_;
    }
    return Error(code_, detail_, std::move(path));
}

}  // namespace latentdiff
