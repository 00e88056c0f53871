#pragma once

#include <string>
#include <vector>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/geometry.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/types.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

/// Cylindrical reconstruction field-of-view mask about the rotation axis.
struct FovMask {
  GridSpec grid;
  std::vector<std::uint8_t> inside;
  double radius_mm = 0.0;
  std::size_t count = 0;
};

/// Half-fan FOV: radius = (detector half-width + |offset|) * sid / sdd.
FovMask fov_mask(const ScanGeometry& geom, const GridSpec& grid);

/// Root mean squared difference over masked voxels (mm^-1).
double rmse(const VoxelVolume& volume, const VoxelVolume& reference, const FovMask& mask);

/// 20 log10(max of reference within mask / rmse); +infinity when rmse == 0.
double psnr(const VoxelVolume& volume, const VoxelVolume& reference, const FovMask& mask);

/// Endpoint error |D_fit(x,t) - D_truth(x,t)| per probe point (mm).
std::vector<double> dvf_error(const FFDMotionModel& fitted, const TruthMotion& truth,
                              std::span<const Vec3> probes, double t);

struct EvalTimePoint {
  double time = 0.0;
  double psnr_db = 0.0;
  double rmse = 0.0;
  double dvf_mean_mm = 0.0;
  double dvf_median_mm = 0.0;
};

struct EvalReport {
  std::vector<EvalTimePoint> per_time;
  double mean_psnr_db = 0.0;
  double mean_rmse = 0.0;
  double dvf_mean_mm = 0.0;
  double dvf_median_mm = 0.0;
  bool has_dvf = false;
  double mask_radius_mm = 0.0;
  std::string peak_convention = "max of ground truth within mask, per time point";
};

/// Uniformly spaced sample times over [0, n_t-1] (plus the midpoint when
/// it is not already included).
std::vector<double> eval_time_samples(int n_t, int n_samples);

/// Per-time masked PSNR/RMSE of the fitted dynamic volumes against the truth
/// volumes, plus DVF endpoint errors at the feature blob centers (skipped in
/// per-Gaussian mode, which defines no continuous DVF).
EvalReport evaluate_run(const GaussianCloud& cloud, const MotionState& motion,
                        const TruthBundle& truth, const ScanGeometry& geom, const GridSpec& grid,
                        const std::vector<double>& time_samples, bool parallel = true);

std::string format_report(const EvalReport& report);

}  // namespace cbgs
