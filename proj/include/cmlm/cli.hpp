#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cmlm {

// Entry point behind the `cmlm` executable. `args` excludes the program
// name. Returns 0 on success, 1 on a runtime failure (one diagnostic line on
// `err`), 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmlm
