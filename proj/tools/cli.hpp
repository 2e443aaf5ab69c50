#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trajex::cli {

// Exit codes: 0 success, 1 usage error, 2 data or format error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trajex::cli
