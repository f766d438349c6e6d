#pragma once

#include <iosfwd>

namespace voom::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kInvalidInput = 2,
  kTrackingLost = 3,
};

/// Entry point shared by the `voom` binary and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace voom::cli
