#pragma once

namespace mresim {

/// Exit codes: 0 success, 1 usage error, 2 data or format error, 3 solver non-convergence.
int cli_main(int argc, const char* const* argv);

}  // namespace mresim
