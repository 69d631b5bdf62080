#pragma once

#include <ostream>

namespace unetseg::cli {

/// Entry point of the `unetseg` executable. Returns the process exit code:
/// 0 success, 2 configuration or usage error, 3 data error, 4 training or
/// selection error, 5 I/O error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unetseg::cli
