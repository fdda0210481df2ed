#pragma once

namespace prefdiff {

// Entry point behind tools/prefdiff. Returns the process exit status:
// 0 success, 1 runtime failure (one-line `error: ...` on stderr), 2 usage
// errors.
int cmd_dispatch(int argc, const char* const* argv);

}  // namespace prefdiff
