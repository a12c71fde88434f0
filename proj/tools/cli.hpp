// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace mergeforge::cli {

/// Entry point for the `mergeforge` tool. Returns the process exit status:
/// 0 when every requested artifact was written, 1 on a library error (one
/// line on `err` of the form "error: <Code>: <detail>"), 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mergeforge::cli
