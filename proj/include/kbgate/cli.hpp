// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace kbgate {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitFatal = 3;

inline constexpr const char* kToolVersion = "0.3.0";

/// Entry point of the `kbgate` tool; argv[0] is the program name.
int run_cli(const std::vector<std::string>& argv);
int run_cli(int argc, char** argv);

}  // namespace kbgate
