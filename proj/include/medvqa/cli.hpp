#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace medvqa {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;     // module error or failed check
inline constexpr int kExitUsage = 2;       // bad flags or configuration
inline constexpr int kExitIncomplete = 3;  // batch finished with per-item failures

/// Runs the command line `args` (args[0] is the program name). Results go to
/// `out`; failures are written to `err` as one JSON record
/// {"error": {"code": "<module>.<CODE>", ...}}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medvqa
