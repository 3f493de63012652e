#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace focuskit {

// Process exit codes of the focuskit binary.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,        // bad flags, or an internal error
  kExitConfig = 2,       // invalid config or flag value
  kExitIo = 3,           // unreadable, unwritable or malformed files
  kExitDivergence = 4,   // non-finite training loss
  kExitCheckpoint = 5,   // missing or mismatched checkpoint
  kExitUnmatched = 6,    // report without a truth record
  kExitDegenerate = 7,   // training data with a single class
};

// `args` excludes the program name. Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace focuskit
