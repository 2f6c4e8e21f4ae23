#pragma once

#include <iosfwd>

#include "qamoe/training.hpp"

namespace qamoe::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,        // bad flags, config or input values
  kIo = 3,           // missing or unwritable files
  kFormat = 4,       // malformed or wrong-version dataset/checkpoint
  kDivergence = 5,   // training produced non-finite values
  kMetric = 6,       // a metric is undefined on the evaluated split
  kCheckFailed = 7,  // gradcheck tolerance exceeded or the oracle failed
  kOutput = 8,       // an output file did not validate
};

struct Environment {
  const char* out_dir = nullptr;  // value of QAMOE_OUT
  TrainHooks hooks;
};

// Parses argv and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const Environment& env);

}  // namespace qamoe::cli
