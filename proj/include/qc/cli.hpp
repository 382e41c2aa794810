#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qc {

// Exit codes: 0 success, 1 operation failure, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs the command line `args` (without the program name). Data goes to
// `out`; help, usage and error summaries go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Every leaf command path, e.g. "dataset stats", "agree dgs".
std::vector<std::string> cli_commands();

}  // namespace qc
