#pragma once

#include <string>
#include <vector>

namespace physiolite {

// Runs one CLI invocation; `args` excludes the program name.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace physiolite
