#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hvcu::cli {

enum ExitStatus : int {
    kExitOk = 0,
    kExitPartial = 1,
    kExitUsage = 2,
    kExitBackend = 3,
};

/// Runs the `hvcu` command line. `args` excludes the program name. Data goes
/// to `out`; usage and error text to `err`; logs to stderr.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hvcu::cli
