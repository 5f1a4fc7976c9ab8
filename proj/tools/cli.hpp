#pragma once

#include <string>
#include <vector>

namespace pathe::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Runs the `pathe` command line (args[0] is the program name). Data goes to
// standard output and files, diagnostics to standard error.
int run(const std::vector<std::string>& args);

}  // namespace pathe::cli
