// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace act {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Runs one `act` subcommand. `args` excludes the program name. Returns 0 on
/// success, 2 for configuration problems, 1 for runtime failures; errors are
/// printed to stderr with their category.
int run_cli(const std::vector<std::string>& args);

} // namespace act
