#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace modrestore {

/// Exit codes: 0 success, 1 user error (bad flags, invalid values, unreadable
/// inputs), 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace modrestore
