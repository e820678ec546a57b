#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rrp {

/// Exit codes: 0 success, 1 user error (bad input, conflicting state,
/// authentication), 2 system error (unreachable services, integrity
/// failures, internal faults).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitSystem = 2;

/// `args[0]` is the program name. Every project subcommand goes through the
/// REST API; `serve`, `play` and `rdms-serve` run locally.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rrp
