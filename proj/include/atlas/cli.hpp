#pragma once

#include <string>
#include <vector>

namespace atlas::cli {

/// Dispatches one subcommand (gen | encode | train | infer | eval | ratio |
/// sweep). Returns 0 on success, 1 on usage error, 2 on runtime error.
int run(const std::vector<std::string>& args);

}  // namespace atlas::cli
