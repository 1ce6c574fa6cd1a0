#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dataforge {

/// `args` excludes the program name. Returns 0 on success, 1 on a domain
/// error and 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dataforge
