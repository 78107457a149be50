#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pwrdist::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kInfeasible = 3,
  kRuntime = 4,
};

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pwrdist::cli
