#pragma once

// Command-line entry point: gen | merge | diagnose | eval | compare.
// Exit codes: 0 success, 1 method failure, 2 usage or config error, 3 numerical failure.

#include <ostream>
#include <string>
#include <vector>

namespace qpmerge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitMethodFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// `args` excludes the program name. Reports go to `out` unless --out/--report
/// redirect them; summaries and warnings go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qpmerge
