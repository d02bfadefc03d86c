#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace rainex::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissing = 3;

/// Runs the `rainex` command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Long flags by subcommand ("" holds the global flags).
std::map<std::string, std::vector<std::string>> flag_registry();

}  // namespace rainex::cli
