#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dfu {

// Exit codes: 0 success, 1 an invariant check failed, 2 invalid configuration
// or usage, 3 runtime failure (I/O, corrupt checkpoint, locked directory).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dfu
