#pragma once

namespace hfprune::cli {

// Process exit codes. Every error path prints a single diagnostic line.
enum ExitCode : int {
  kOk = 0,
  kGenericError = 1,
  kFormatError = 2,  // unreadable/malformed input, bad usage
  kShapeError = 3,   // shape or vocabulary mismatch
  kInfeasible = 4,   // prune ratio cannot be met
  kGradCheckFailed = 5,
};

int run(int argc, char** argv);

}  // namespace hfprune::cli
