#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace angiodit::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitIo = 3,
    kExitNumeric = 4,
    kExitGate = 5,
};

// Runs one command line (without the program name). The JSON run summary
// goes to `out`; log lines go to `log`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace angiodit::cli
