#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fpad::cli {

// Exit codes: 0 success, 1 domain error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

// Runs one `fpad` invocation; argv[0] is the program name. Results go to
// `out`, logs and errors to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fpad::cli
