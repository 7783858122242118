#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace routemlp::cli {

/// Exit codes: 0 success, 1 runtime error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// Same, with `args` excluding the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace routemlp::cli
