#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dpnmt {

// Exit statuses of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitData = 3,
    kExitNumeric = 4,
};

// Runs one `dpnmt` invocation; args excludes the program name. Progress and
// errors go to err, summaries and reports to out.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dpnmt
