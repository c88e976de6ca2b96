#pragma once

#include <ostream>

namespace attndiff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDegenerate = 3;

/// Runs one `attndiff` invocation. Normal output goes to `out`, errors and
/// warnings to `err`. An "unrelated" verdict is a successful run (0).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace attndiff::cli
