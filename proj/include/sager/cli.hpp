// Command-line front end: train, parse, eval, hierarchy, gradcheck, ablate.
#pragma once

#include <iosfwd>

namespace sager {

// Exit codes: 0 success, 1 I/O or data failure, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sager
