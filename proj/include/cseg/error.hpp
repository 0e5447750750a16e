#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cseg {

enum class ErrorCode {
    InvalidArgument,
    InvalidTrainingSet,
    NumericFailure,
    NoCandidate,
    UndefinedMetric,
    DegenerateTest,
    FormatError,
};

std::string_view error_code_name(ErrorCode code);

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorCode::InvalidArgument, message);
}

}  // namespace cseg
