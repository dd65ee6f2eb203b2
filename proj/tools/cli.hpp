#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stalereg::cli {

inline constexpr int kOk = 0;
inline constexpr int kRejected = 1;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// args excludes the program name; args[0] is the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stalereg::cli
