// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace stagewise::service {

enum ExitCode : int {
  kExitOk = 0,
  /// Run failed for a reason other than divergence (I/O, stop request).
  kExitFailed = 1,
  /// Usage, config, manifest or checkpoint errors.
  kExitConfig = 2,
  kExitDiverged = 3,
};

/// Parses argv (synth | lr-find | train | eval | serve) and runs the command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stagewise::service
