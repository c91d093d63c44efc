#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace relkit {

/// Runs one command: build-kg, mine-paths, sample-oneshot, train, eval or
/// gradcheck. `args` excludes the program name. Returns 0 on success, 1 when
/// the command fails (diagnostic on `err`) and 2 on a usage error.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The usage summary printed for unknown commands.
std::string usage_text();

}  // namespace relkit
