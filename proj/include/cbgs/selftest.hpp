#pragma once

#include <iosfwd>

namespace cbgs {

/// Runs the gradient-check, oracle and invariant suites; prints one line per
/// check. Returns the number of failed checks.
int run_selftest(std::ostream& os);

}  // namespace cbgs
