#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pts {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitGateFailure = 3,
  kExitInternal = 4,
};

/// Entry point of the `pts` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pts
