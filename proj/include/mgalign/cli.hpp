#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mgalign::cli {

/// Exit codes: 0 success, 1 module error (one "module.Kind: detail" line on
/// stderr), 2 usage error (message plus usage text on stderr).
int run(int argc, char** argv);

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mgalign::cli
