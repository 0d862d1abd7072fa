#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace cakt::cli {

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kRuntimeFailure = 2 };

using Getenv = std::function<const char*(const char*)>;

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const Getenv& getenv);

}  // namespace cakt::cli
