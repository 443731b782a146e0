#pragma once

#include <iosfwd>

namespace amrlab::cli {

// Entry point shared by the executable and the tests. Returns the process
// exit code: 0 ok, 1 usage, 2 config, 3 data or IO, 4 numeric or run
// failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace amrlab::cli
