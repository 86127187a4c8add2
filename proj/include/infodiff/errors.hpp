#pragma once

#include <stdexcept>
#include <string>

namespace infodiff {

enum class ErrorCode {
    kDomain,                 // argument outside the mathematical domain (t < 0, lambda > 1, ...)
    kBounds,                 // index out of range
    kArgument,               // malformed or inconsistent arguments
    kCapExceeded,            // exact enumeration would exceed its cap
    kZeroConditioningEvent,  // conditioning on a probability-zero event
    kZeroDenominator,        // ratio with zero denominator
    kInvalidScore,           // non-positive score where the target ratio is positive
    kInfeasible,             // impossible generation request
    kConfig,
    kIo,
    kFormat,
    kDivergence,             // training produced a non-finite loss
};

inline const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::kDomain: return "DomainError";
        case ErrorCode::kBounds: return "BoundsError";
        case ErrorCode::kArgument: return "ArgumentError";
        case ErrorCode::kCapExceeded: return "CapExceeded";
        case ErrorCode::kZeroConditioningEvent: return "ZeroConditioningEvent";
        case ErrorCode::kZeroDenominator: return "ZeroDenominator";
        case ErrorCode::kInvalidScore: return "InvalidScore";
        case ErrorCode::kInfeasible: return "Infeasible";
        case ErrorCode::kConfig: return "ConfigError";
        case ErrorCode::kIo: return "IoError";
        case ErrorCode::kFormat: return "FormatError";
        case ErrorCode::kDivergence: return "Divergence";
    }
    return "Error";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const char* message) {
    if (!condition) fail(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

}  // namespace infodiff
