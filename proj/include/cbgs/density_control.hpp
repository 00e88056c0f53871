#pragma once

#include <cstdint>
#include <vector>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/optimizer.hpp"
#include "cbgs/rng.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

/// Running mean of the per-kernel positional gradient norm in image space
/// (pixels), accumulated over iterations where the kernel was rendered.
struct DensifyStats {
  std::vector<double> accum;
  std::vector<long> count;

  void resize(std::size_t n) {
    accum.resize(n, 0.0);
    count.resize(n, 0);
  }
  void accumulate(std::span<const double> center_grad_norm, std::span<const std::uint8_t> live);
  double mean(std::size_t n) const { return count[n] > 0 ? accum[n] / double(count[n]) : 0.0; }
  void reset();
};

struct DensifyConfig {
  double grad_threshold = 5e-8;        // on the mean image-space gradient norm
  double prune_rel_threshold = 1e-4;   // of the max activated density
  double split_factor = 1.6;           // children scales divided by this
  double split_scale_fraction = 0.01;  // of the scene extent: split above, clone below
  double clone_jitter = 0.05;          // jitter sigma as a fraction of the kernel sigma
  std::size_t max_kernels = 500000;
};

/// Optimizable per-kernel state moved together by density control.
struct SceneParams {
  GaussianCloud* cloud = nullptr;
  PerGaussianWeights* pg = nullptr;  // may be null
  AdamState* adam_rho = nullptr;
  AdamState* adam_mean = nullptr;
  AdamState* adam_quat = nullptr;
  AdamState* adam_scale = nullptr;
  AdamState* adam_pg = nullptr;  // may be null
};

struct DensifyOutcome {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

/// Clone/split kernels whose accumulated positional gradient exceeds the
/// threshold, prune kernels with negligible activated density, and keep the
/// Adam states, per-Gaussian weights and statistics aligned. Stats are reset
/// afterwards.
DensifyOutcome density_control(SceneParams scene, DensifyStats& stats, const DensifyConfig& cfg,
                               double scene_extent, Pcg32& rng);

}  // namespace cbgs
