#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cbgs/density_control.hpp"
#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/optimizer.hpp"
#include "cbgs/projection_set.hpp"
#include "cbgs/splat_render.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

struct TrainConfig {
  long iterations = 50000;
  MotionMode mode = MotionMode::kDi;
  bool freeze_motion = false;
  bool deterministic = false;
  bool parallel = true;
  std::uint64_t seed = 0;

  int rank = 2;
  double temporal_spacing = 4.0;        // time indices between temporal controls
  double lattice_spacing_voxels = 8.0;  // lattice spacing in init-volume voxels

  std::size_t init_points = 80000;
  double init_threshold_rel = 0.05;  // of the init volume max

  // Cloud learning-rate schedules; the mean rate is multiplied by the scene
  // extent (mm). Lattice and temporal rates follow the published defaults.
  LrSchedule lr_rho{1e-2, 1e-3};
  LrSchedule lr_mean_rel{2e-4, 2e-6};
  LrSchedule lr_quat{1e-3, 1e-4};
  LrSchedule lr_scale{5e-3, 5e-4};
  LrSchedule lr_lattice{1e-4, 1e-5};
  LrSchedule lr_temporal{1e-2, 1e-3};
  LrSchedule lr_pg{1e-4, 1e-5};

  long densify_interval = 100;
  double densify_stop_fraction = 0.5;
  double densify_grad_threshold = 5e-8;
  double prune_rel_threshold = 1e-4;
  double split_factor = 1.6;
  double split_scale_fraction = 0.01;
  std::size_t max_kernels = 500000;

  long checkpoint_interval = 5000;
  long log_interval = 100;
  double low_pass_px2 = 0.3;
  double scale_clamp_min_voxels = 0.1;  // of the init voxel size
  double scale_clamp_max_fov = 0.5;     // of the scene extent

  void validate() const;
};

struct TrainLogRow {
  long iteration = 0;
  double loss = 0.0;
  std::size_t kernels = 0;
  long fold_incidents = 0;
  double wall_ms = 0.0;
};

struct TrainResult {
  GaussianCloud cloud;
  MotionState motion;
  std::vector<TrainLogRow> log;
  long fold_incidents = 0;
  long clamp_incidents = 0;
  long skipped_gradients = 0;
  double final_loss = 0.0;
};

struct TrainHooks {
  /// Called at checkpoint intervals and once after the final iteration.
  std::function<void(long iteration, const GaussianCloud&, const MotionState&)> on_checkpoint;
  std::function<void(const TrainLogRow&)> on_log;
};

/// Build the motion state the training starts from (zero displacements and
/// temporal controls; lattice sized from the grid with a one-spacing margin).
MotionState make_motion_state(const TrainConfig& config, const GridSpec& grid, int n_t,
                              std::size_t n_kernels);

/// Mean squared error over pixels and its gradient image.
struct LossResult {
  double value = 0.0;
  ImageBuffer grad;
};
LossResult l2_loss(const ImageBuffer& rendered, const DetectorImage& measured);

/// Fit the cloud and the motion model to the projections: per iteration one
/// uniformly drawn view, warp -> render -> L2 -> full analytic backward ->
/// per-group Adam; density control on schedule. Deterministic given the seed
/// (for a fixed thread count). Throws NumericError with diagnostics when the
/// loss turns non-finite.
TrainResult train(const TrainConfig& config, const ProjectionSet& projections,
                  const VoxelVolume& init_volume, const TrainHooks& hooks = {});

}  // namespace cbgs
