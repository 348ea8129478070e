#pragma once

#include <atomic>
#include <ostream>
#include <string>
#include <vector>

namespace pragtag::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitBackend = 3,
  kExitInterrupted = 130,
};

/// Runs one command line (without the program name). Data goes to `out`,
/// progress and diagnostics to `err`. `cancel` stops annotate and serve.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* cancel = nullptr);

}  // namespace pragtag::cli
