#pragma once

#include <stdexcept>
#include <string>

namespace cbgs {

/// Invalid user input: bad geometry, mismatched dimensions, malformed config.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric domain violations: non-SPD covariance, degenerate quaternion,
/// evaluation outside a spline domain.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / format failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cbgs
