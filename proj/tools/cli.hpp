#pragma once

#include <iosfwd>

namespace xmodal::cli {

/// Runs one invocation of the command-line tool. Data goes to `out`, logs
/// and diagnostics to `err`. Returns 0 on success, 1 on user error (bad flags
/// or input files) and 2 on an internal failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xmodal::cli
