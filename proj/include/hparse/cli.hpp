#pragma once

#include <iostream>

namespace hparse {

/// Entry point of the `hparse` tool. Returns 0 on success, 1 on runtime
/// failure and 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace hparse
