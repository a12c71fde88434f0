// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mergeforge {

enum class ErrorCode {
    MalformedHeader,
    OffsetOverlap,
    UnknownDtype,
    IoFailure,
    InvariantViolation,
    IncompatibleArchives,
    ZeroWeightSum,
    BadCoefficient,
    UnknownTensor,
    BadGrid,
    MissingScores,
    DegenerateBaseline,
    EmptySet,
    MissingBaseline,
    UnreadableFile,
    RecipeInvalid,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above.
/// For RecipeInvalid the detail string is the offending field name.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string detail);

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

[[noreturn]] void raise(ErrorCode code, std::string detail);

}  // namespace mergeforge
