// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/error.hpp"

namespace mergeforge {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::OffsetOverlap: return "OffsetOverlap";
    case ErrorCode::UnknownDtype: return "UnknownDtype";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::IncompatibleArchives: return "IncompatibleArchives";
    case ErrorCode::ZeroWeightSum: return "ZeroWeightSum";
    case ErrorCode::BadCoefficient: return "BadCoefficient";
    case ErrorCode::UnknownTensor: return "UnknownTensor";
    case ErrorCode::BadGrid: return "BadGrid";
    case ErrorCode::MissingScores: return "MissingScores";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::RecipeInvalid: return "RecipeInvalid";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, std::string detail)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
      code_(code),
      detail_(std::move(detail)) {}

void raise(ErrorCode code, std::string detail) { throw Error(code, std::move(detail)); }

}  // namespace mergeforge
