#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace seg25d {

// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,    // bad flags or config
  kExitData = 2,     // missing, malformed or mismatched data
  kExitNumeric = 3,  // NaN during training or inference
};

// Runs one command line (without the program name). Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seg25d
