#pragma once

#include <cstdint>
#include <vector>

#include "cbgs/error.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

/// Uniform voxel grid. `origin` is the world coordinate of the center of
/// voxel (0,0,0); storage is x-fastest.
struct GridSpec {
  Vec3i dims = Vec3i::Zero();
  double spacing = 0.0;  // mm, isotropic
  Vec3 origin = Vec3::Zero();

  std::size_t voxel_count() const { return std::size_t(dims.x()) * dims.y() * dims.z(); }
  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * dims.y() + j) * dims.x() + i;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + spacing * Vec3(double(i), double(j), double(k));
  }
  Vec3 min_corner() const { return origin - 0.5 * spacing * Vec3::Ones(); }
  Vec3 max_corner() const {
    return origin + spacing * (dims.cast<double>() - 0.5 * Vec3::Ones());
  }
  double extent() const { return spacing * double(dims.maxCoeff()); }
  bool valid() const { return dims.minCoeff() >= 1 && spacing > 0.0; }

  /// Grid of `n` voxels per axis centered on the origin.
  static GridSpec centered(int n, double spacing_mm) {
    GridSpec g;
    g.dims = Vec3i(n, n, n);
    g.spacing = spacing_mm;
    g.origin = -0.5 * spacing_mm * double(n - 1) * Vec3::Ones();
    return g;
  }
};

struct VoxelVolume {
  GridSpec grid;
  std::vector<float> data;

  VoxelVolume() = default;
  explicit VoxelVolume(const GridSpec& g) : grid(g), data(g.voxel_count(), 0.0f) {}
  float& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
};

/// Hard clamp on activated kernel standard deviations (mm).
struct ScaleClamp {
  double min_sigma = 1e-4;
  double max_sigma = 1e6;
};

/// The optimizable scene: N Gaussian kernels with raw (pre-activation)
/// density, world mean, rotation quaternion (w,x,y,z; normalized on use) and
/// log standard deviations.
struct GaussianCloud {
  std::vector<double> rho_raw;
  std::vector<Vec3> mean;
  std::vector<Vec4> quat;
  std::vector<Vec3> log_scale;
  ScaleClamp clamp;

  std::size_t size() const { return rho_raw.size(); }
  void reserve(std::size_t n);
  void push_back(double raw, const Vec3& mu, const Vec4& q, const Vec3& s);
  /// Keep only kernels with keep[n] != 0 (order preserved).
  void filter(const std::vector<std::uint8_t>& keep);
};

/// Non-negative density activation (softplus) and its pieces. The raw
/// parameter is unconstrained; the activated value is the kernel amplitude
/// in mm^-1.
double activate_density(double raw);
double activate_density_grad(double raw);
double inverse_activate_density(double rho);

/// Activated standard deviations exp(s) clamped into [min_sigma, max_sigma].
Vec3 activated_sigma(const Vec3& log_scale, const ScaleClamp& clamp);

/// Sigma = R(q) diag(sigma^2) R(q)^T. Throws NumericError for |q| < 1e-12.
Mat3 assemble_covariance(const Vec4& quat, const Vec3& log_scale, const ScaleClamp& clamp);

/// Rotation matrix of a (normalized-on-use) quaternion.
Mat3 quat_to_rotation(const Vec4& quat);

/// Backward of assemble_covariance: maps a symmetric upstream dL/dSigma to
/// gradients of the raw quaternion and log scales.
void assemble_covariance_backward(const Vec4& quat, const Vec3& log_scale, const ScaleClamp& clamp,
                                  const Mat3& dcov, Vec4& dquat, Vec3& dlog_scale);

/// Attenuation at a world point: superposition over kernels, each restricted
/// to its cutoff box.
double field_value(const KernelView& kernels, const Vec3& x);
double field_value(const GaussianCloud& cloud, const Vec3& x);

/// Materialize activated per-kernel quantities from a cloud.
void activate_cloud(const GaussianCloud& cloud, std::vector<Vec3>& mean,
                    std::vector<Mat3>& cov, std::vector<double>& rho);

/// Scatter kernels into a voxel volume. The parallel path bins kernels per
/// z-slice and accumulates per voxel in kernel index order, so it matches
/// the brute-force reference exactly.
VoxelVolume rasterize_kernels(const KernelView& kernels, const GridSpec& grid, bool parallel = true);
/// Brute force: field_value at every voxel center.
VoxelVolume rasterize_kernels_reference(const KernelView& kernels, const GridSpec& grid);

VoxelVolume rasterize_to_volume(const GaussianCloud& cloud, const GridSpec& grid, bool parallel = true);

/// Importance-sample a cloud from a volume: means drawn from voxels above
/// `threshold` proportionally to value and jittered within the voxel cell;
/// isotropic scales from mean 3-nearest-neighbor distances; densities
/// calibrated so the rasterized cloud matches the volume's mean over its
/// support. Throws ValidationError when no voxel exceeds the threshold.
GaussianCloud sample_cloud_from_volume(const VoxelVolume& volume, std::size_t n_points,
                                       double threshold, std::uint64_t seed,
                                       const ScaleClamp& clamp);

}  // namespace cbgs
