#pragma once

// Batch front end: simulate, fit, weights, compare, summarize.
//
// Each subcommand reads an optional JSON config (--config) and applies flag
// overrides on top; unknown keys are rejected before any work starts. Outputs
// are staged and moved into the output directory only when the command
// succeeds, together with resolved_config.json.

#include <iosfwd>
#include <string>
#include <vector>

namespace mnarvam::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kValidation = 2,
  kConvergence = 3,
  kIo = 4,
  kNumerical = 5,
  kComparison = 6,
};

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mnarvam::cli
