#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace strokezs::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

// Runs one command line (without the program name). Results go to `out`,
// diagnostics and progress to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace strokezs::cli
