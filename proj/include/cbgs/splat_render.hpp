#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cbgs/geometry.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

struct RenderOptions {
  double low_pass_px2 = 0.3;  // variance floor added to the 2D footprint diagonal
  int tile_size = 16;
  bool parallel = true;
};

/// Projected kernel on the detector. `cov` already carries the low-pass
/// floor; `amplitude` is the density scaled by the ray-marginalization
/// constant of the unfloored 3D splat. `world_to_splat` caches T = J * R for
/// the backward pass; gradients w.r.t. the mean treat it as constant.
struct Splat2D {
  Vec2 center = Vec2::Zero();      // pixels
  Mat2 cov = Mat2::Identity();     // pixels^2
  Mat2 cov_inv = Mat2::Identity();
  double amplitude = 0.0;          // mm^-1 * mm
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds, clipped
  Mat3 world_to_splat = Mat3::Identity();
  bool live = false;

  bool empty() const { return !live || x0 > x1 || y0 > y1; }
};

/// Ray-marginalization constant of a camera-space covariance whose third
/// axis is aligned with the ray: sqrt(2 pi det(S3) / det(S2)), the exact
/// line-integral normalization of a trivariate Gaussian. Throws NumericError
/// for non-SPD input.
double integration_factor(const Mat3& cov_camera);

/// Project one kernel; a culled result (behind the source or footprint off
/// the detector) has live == false.
Splat2D project_gaussian(const ViewPose& pose, const ScanGeometry& geom, const Vec3& mean,
                         const Mat3& cov, double rho, const RenderOptions& opt = {});

/// Project every kernel of a snapshot; output index-aligned with the input.
std::vector<Splat2D> project_snapshot(const KernelView& kernels, const ViewPose& pose,
                                      const ScanGeometry& geom, const RenderOptions& opt = {});

/// Same, but with externally supplied perspective Jacobians (index-aligned,
/// one per kernel). This is the forward map the analytic backward pass
/// differentiates exactly: gradient checks re-render through this entry
/// point with the Jacobians frozen at the evaluation point.
std::vector<Splat2D> project_snapshot_frozen(const KernelView& kernels, const ViewPose& pose,
                                             const ScanGeometry& geom,
                                             std::span<const Mat3> jacobians,
                                             const RenderOptions& opt = {});

/// Per-kernel perspective Jacobians of the current snapshot (dead kernels
/// get identity).
std::vector<Mat3> snapshot_jacobians(const KernelView& kernels, const ViewPose& pose,
                                     const ScanGeometry& geom);

/// Additive composition of splats, tiled and parallel over tiles. Every
/// pixel accumulates its splats in index order, so the result is bit-equal
/// to composite_reference for any thread count.
ImageBuffer composite(std::span<const Splat2D> splats, int rows, int cols,
                      const RenderOptions& opt = {});

/// Naive per-pixel-per-splat double loop, kept as the serial reference.
ImageBuffer composite_reference(std::span<const Splat2D> splats, int rows, int cols);

ImageBuffer render_buffer(const KernelView& kernels, const ViewPose& pose,
                          const ScanGeometry& geom, const RenderOptions& opt = {});
DetectorImage render(const KernelView& kernels, const ViewPose& pose, const ScanGeometry& geom,
                     const RenderOptions& opt = {});

/// Gradients of sum(upstream * image) w.r.t. activated density, warped mean
/// and warped covariance. center_grad_norm carries |dL/d(center)| per kernel
/// for density-control statistics.
struct RenderGrads {
  std::vector<double> rho;
  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> center_grad_norm;
};

RenderGrads render_backward(const KernelView& kernels, std::span<const Splat2D> splats,
                            const ImageBuffer& upstream, const RenderOptions& opt = {});

}  // namespace cbgs
