#pragma once

#include <ostream>

namespace saspec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitWarning = 2;
inline constexpr int kExitCollapsed = 3;
inline constexpr int kExitVerifyFailed = 4;

/// Runs the saspec command line. Results go to `out`, diagnostics and log
/// messages to `err`. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace saspec::cli
