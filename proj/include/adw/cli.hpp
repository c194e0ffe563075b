#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adw::cli {

// Runs the adw command line in-process; args excludes the program name.
// Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adw::cli
