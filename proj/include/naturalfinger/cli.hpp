#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nf::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kConfigError = 2 };

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nf::cli
