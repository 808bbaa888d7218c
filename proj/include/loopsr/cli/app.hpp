#pragma once

#include <string>
#include <vector>

namespace loopsr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitArtifact = 3;
inline constexpr int kExitNumerical = 4;

// Parses argv (program name first), runs the subcommand and maps errors onto
// exit codes.
int run_app(const std::vector<std::string>& args);

}  // namespace loopsr::cli
