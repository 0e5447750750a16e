#include "cseg/error.hpp"

namespace cseg {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid-argument";
        case ErrorCode::InvalidTrainingSet: return "invalid-training-set";
        case ErrorCode::NumericFailure: return "numeric-failure";
        case ErrorCode::NoCandidate: return "no-candidate";
        case ErrorCode::UndefinedMetric: return "undefined-metric";
        case ErrorCode::DegenerateTest: return "degenerate-test";
        case ErrorCode::FormatError: return "format-error";
    }
    return "unknown";
}

}  // namespace cseg
