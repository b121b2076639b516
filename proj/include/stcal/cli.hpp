#pragma once

#include <string>
#include <vector>

namespace stcal {

// Dispatches one CLI invocation (args exclude the program name). Returns the
// process exit code: 0 success, 1 usage/validation error, 2 operational
// failure. Never throws.
int run_cli(const std::vector<std::string>& args);

}  // namespace stcal
