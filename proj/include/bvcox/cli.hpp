#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bvcox {

/// Runs the command-line front end. args[0] is the program name. Returns
/// the process exit code: 0 success, 1 validation or usage error, 2
/// non-convergence, 3 numerical or unexpected failure. Errors are also
/// emitted as one JSON record on `err` and, when an output directory is
/// known, as error.json inside it.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bvcox
