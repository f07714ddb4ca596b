#pragma once

#include <iosfwd>

namespace irra {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitIo = 2;

/// Entry point of the irra_kit command-line tool. Reports go to `out`,
/// diagnostics and progress to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace irra
