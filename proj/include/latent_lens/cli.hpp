#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace latent_lens {

/// Runs one `latent-lens` invocation. `args` excludes the program name.
/// Returns 0 on success, 1 on runtime failure, 2 on configuration errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace latent_lens
