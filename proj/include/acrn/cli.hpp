#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace acrn {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitConfig = 2,
  kExitData = 3,
};

// Entry point of the `acrn` tool: train, eval, gradcheck and inspect.
// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace acrn
