#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace auditllm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitProvider = 3;
inline constexpr int kExitAllFailed = 4;

/// Runs the `audit` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace auditllm::cli
