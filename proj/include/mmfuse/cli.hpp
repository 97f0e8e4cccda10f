#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmfuse {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Runs one mmfuse command. `args` excludes the program name. Errors are
// reported on `err` and mapped to the exit codes above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfuse
