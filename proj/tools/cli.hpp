#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "crowdnav/config.hpp"

namespace crowdnav::cli {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

/// Applies `--section.key value` / `--section.key=value` tokens on top of kv.
/// Throws ConfigError on anything that is not such a pair.
void apply_overrides(const std::vector<std::string>& tokens, KeyValues& kv);

/// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crowdnav::cli
