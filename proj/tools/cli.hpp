#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sphdepth::cli {

/// Runs the command line with argv-style `args` (args[0] is the program
/// name). Returns the process exit code: 0 ok, 2 validation, 3 I/O,
/// 4 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sphdepth::cli
