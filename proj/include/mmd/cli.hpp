#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmd::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Runs one invocation. `args` excludes the program name. Progress goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmd::cli
