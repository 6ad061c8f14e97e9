#pragma once

#include <iosfwd>

namespace pdd {

/// Parses argv and runs one subcommand. Returns the process exit status;
/// diagnostics go to `err`, results to `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pdd
