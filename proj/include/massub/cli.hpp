#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace massub {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point of the `massub` tool: commands fit, simulate and gen-data.
/// Returns the process exit code (0 success, 2 input/config error, 3 numerical failure).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace massub
