#pragma once

#include <ostream>

namespace cvla {

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitCertification = 4;

/// Runs the `cvla` command line. Reports go to out as JSON; diagnostics go to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cvla
