#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/geometry.hpp"
#include "cbgs/splat_render.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

/// Finite-difference validation of the analytic backward passes, run on
/// randomized small scenes (10 kernels, 32x32 detector). The forward map
/// under test holds the per-kernel perspective Jacobians fixed at the
/// evaluation point, which is exactly the map the backward pass
/// differentiates.
struct GradCheckResult {
  std::map<std::string, double> max_rel_error;

  double worst() const {
    double w = 0.0;
    for (const auto& [k, v] : max_rel_error) w = std::max(w, v);
    return w;
  }
};

/// Gradients of the renderer w.r.t. snapshot parameters (rho, mean, cov).
GradCheckResult check_render_gradients(std::uint64_t seed);

/// Full-chain gradients through warp + render w.r.t. cloud and motion
/// parameters, for the given mode.
GradCheckResult check_warp_gradients(MotionMode mode, std::uint64_t seed);

/// Adjoint of the motion model at probe points (control displacements,
/// temporal controls, and the dL/dx chain).
GradCheckResult check_motion_gradients(std::uint64_t seed);

}  // namespace cbgs
