#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tristream::cli {

/// Exit codes of the tristream tool.
enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kNumericError = 3,
  kInternalError = 4,
};

/// Runs the tool with argv-style arguments (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tristream::cli
