#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cmvf/config.hpp"

namespace cmvf {

// Subcommand bodies shared by the CLI binary and the test harnesses.
// Each writes its artifacts under config "out" and reports to `log`.
// Failures surface as exceptions; main() maps them onto exit codes.

void cmd_synth(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);
void cmd_ablate(const RunConfig& config, std::ostream& log);
// Throws NumericError when the check exceeds its tolerance.
void cmd_gradcheck(const RunConfig& config, std::ostream& log);

// argv-level entry point: `cmvf <command> [--key value ...]`.
// Returns the process exit code (0 ok, 2 usage/config, 3 numeric failure).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace cmvf
