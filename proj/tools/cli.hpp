// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace fieldfuse::cli {

/// Runs one subcommand. Exit codes: 0 success, 1 usage or validation error,
/// 2 file IO error. args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace fieldfuse::cli
