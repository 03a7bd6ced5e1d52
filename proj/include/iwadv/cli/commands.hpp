#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "iwadv/cli/config.hpp"
#include "iwadv/experiments/experiments.hpp"

namespace iwadv::cli {

enum ExitCode { kSuccess = 0, kDomainError = 1, kUsageError = 2 };

/// iwadv <simulate|train|infer|eval|verify-theory|snr> [options]. Artifacts go
/// to --out, or $IWADV_OUTPUT_ROOT/<subcommand> (default root "runs"), together
/// with the resolved config.ini.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

exp::SpikeSetup spike_setup(const RunConfig& config);

}  // namespace iwadv::cli
