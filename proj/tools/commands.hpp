#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ega::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Parses and runs one `ega` command line; errors are reported on stderr
/// and turned into exit codes. Summaries go to `out`.
int run(const std::vector<std::string>& args, std::ostream& out);
int run(int argc, const char* const* argv);

}  // namespace ega::cli
