#pragma once

#include <ostream>

namespace mergeguard::io {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `mergeguard` executable. Subcommands:
///   run, train-victim, defend, merge, eval, audit-bound, report, account.
/// Returns 0 on success, 1 on a usage error (usage text goes to `err`),
/// 2 on a runtime error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mergeguard::io
