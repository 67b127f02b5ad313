#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cdis/gradcheck.hpp"

namespace cdis {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,    // usage, config or parameter error
  kExitData = 2,     // unreadable or malformed data, checkpoint or shape mismatch
  kExitNumeric = 3,  // non-finite values or a failed gradient check
};

/// Tiny random model and batch for checking d L_total / d theta.
struct GradCheckSpec {
  std::size_t batch = 4;     // N
  std::size_t features = 4;  // K
  std::size_t dim = 6;       // projection width d
  std::uint64_t seed = 42;
  double eps = 1e-5;
  bool conv = false;  // conv stem on 2x4x4 images instead of an MLP encoder
};

/// Every model parameter against central differences of the total loss.
GradCheckReport full_stack_grad_check(const GradCheckSpec& spec);

/// Runs one command. `args` excludes the program name. Human-readable output
/// goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdis
