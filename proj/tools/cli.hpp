// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_TOOLS_CLI_HPP
#define EINLIN_TOOLS_CLI_HPP

#include <iosfwd>

namespace einlin::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the einlin tool. JSON goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace einlin::cli

#endif  // EINLIN_TOOLS_CLI_HPP
