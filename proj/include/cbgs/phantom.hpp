#pragma once

#include <cstdint>
#include <vector>

#include "cbgs/ffd_motion.hpp"
#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/geometry.hpp"
#include "cbgs/projection_set.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

/// Analytic Gaussian-blob phantom: broad low-density body blobs plus compact
/// high-density features, stored SoA so it doubles as a KernelView.
struct BlobPhantom {
  std::vector<double> rho;   // mm^-1 peak amplitude
  std::vector<Vec3> mean;    // mm
  std::vector<Mat3> cov;     // mm^2, SPD
  std::size_t n_body = 0;    // leading blobs forming the body outline
  double fov_extent = 0.0;   // mm

  std::size_t size() const { return rho.size(); }
  KernelView view() const { return KernelView{mean, cov, rho}; }
  /// Centers of the feature blobs (trackable structures).
  std::vector<Vec3> feature_centers() const {
    return std::vector<Vec3>(mean.begin() + n_body, mean.end());
  }
};

/// Reproducible phantom: a couple of body ellipsoids plus `n_features`
/// compact blobs inside the given radius.
BlobPhantom make_blob_phantom(int n_features, double fov_extent, std::uint64_t seed);

/// Per-time-index breathing amplitudes: raised-cosine cycles with per-cycle
/// random amplitude scaling and a linear drift.
std::vector<double> breathing_trace(int n_cycles, int points_per_cycle, double amp_min,
                                    double amp_max, double drift, std::uint64_t seed);

/// Ground-truth motion. Three realizable kinds:
///  - spline FFD: a full FFDMotionModel (exactly inside the fitted model class),
///  - trace FFD: FFD spatial fields driven by arbitrary per-time weights,
///  - per-blob: independent rigid trajectories (outside the model class).
class TruthMotion {
 public:
  enum class Kind { kZero, kSplineFfd, kTraceFfd, kPerBlob };

  struct BlobTrajectory {
    Vec3 translation = Vec3::Zero();  // displacement direction * unit amplitude
    Vec3 rot_axis = Vec3::UnitZ();
    double rot_amplitude = 0.0;  // radians at unit trace value
  };

  static TruthMotion zero();
  static TruthMotion spline_ffd(FFDMotionModel model);
  static TruthMotion trace_ffd(SpatialLattice lattice, std::vector<std::vector<double>> traces);
  static TruthMotion per_blob(std::vector<BlobTrajectory> trajectories, std::vector<double> trace);

  Kind kind() const { return kind_; }
  int n_t() const;

  /// Per-rank weights at (possibly fractional) time t.
  std::vector<double> weights_at(double t) const;

  Vec3 displace(const Vec3& x, double t) const;
  Mat3 jacobian(const Vec3& x, double t) const;

  /// Per-blob variants used when transporting phantom blobs; `blob` indexes
  /// the phantom. FFD kinds ignore it.
  Vec3 displace_blob(std::size_t blob, const Vec3& x, double t) const;
  Mat3 jacobian_blob(std::size_t blob, const Vec3& x, double t) const;

  const FFDMotionModel& spline_model() const { return model_; }
  const SpatialLattice& lattice() const;
  const std::vector<std::vector<double>>& traces() const { return traces_; }
  const std::vector<BlobTrajectory>& trajectories() const { return trajectories_; }
  const std::vector<Vec3>& blob_anchors() const { return anchors_; }
  void set_blob_anchors(std::vector<Vec3> anchors) { anchors_ = std::move(anchors); }

 private:
  Kind kind_ = Kind::kZero;
  FFDMotionModel model_;                      // kSplineFfd
  SpatialLattice trace_lattice_;              // kTraceFfd
  std::vector<std::vector<double>> traces_;   // kTraceFfd: [rank][t]
  std::vector<BlobTrajectory> trajectories_;  // kPerBlob
  std::vector<Vec3> anchors_;                 // kPerBlob: reference blob centers
};

/// Phantom transported to time t: means through the DVF, covariances through
/// the congruence with the motion Jacobian.
BlobPhantom phantom_at(const BlobPhantom& phantom, const TruthMotion& motion, double t);

/// Exact cone-beam line integrals of a Gaussian mixture: for each pixel, the
/// closed-form integral of every blob along the physical ray. Machine
/// precision per blob; the oracle for the splatting approximation.
ImageBuffer analytic_project_buffer(const KernelView& blobs, const ViewPose& pose,
                                    const ScanGeometry& geom, bool parallel = true);
DetectorImage analytic_project(const KernelView& blobs, const ViewPose& pose,
                               const ScanGeometry& geom, bool parallel = true);
/// Serial reference (same math, plain loops) kept for the benchmark.
ImageBuffer analytic_project_reference(const KernelView& blobs, const ViewPose& pose,
                                       const ScanGeometry& geom);

struct NoiseSpec {
  double lambda = 1e8;  // photon fluence, counts
  double sigma = 4.0;   // electronic noise, counts
  std::uint64_t seed = 0;
};

/// Count-domain noise: I = Poisson(lambda * exp(-p)) + N(0, sigma^2), clamped
/// to >= 1 count, returned as p_hat = -ln(I / lambda). Per-view RNG streams
/// derive from (seed, view), so parallel generation cannot reorder draws.
DetectorImage add_noise(const DetectorImage& image, const NoiseSpec& noise, int view_index);

struct TruthBundle {
  BlobPhantom phantom;
  TruthMotion motion;
  NoiseSpec noise;
  bool noise_applied = false;
  std::uint64_t seed = 0;

  VoxelVolume volume_at(double t, const GridSpec& grid, bool parallel = true) const {
    return rasterize_kernels(phantom_at(phantom, motion, t).view(), grid, parallel);
  }
};

struct SimSpec {
  ScanGeometry geom;
  BlobPhantom phantom;
  TruthMotion motion;
  NoiseSpec noise;
  bool apply_noise = false;
  std::uint64_t seed = 0;
};

struct SimResult {
  ProjectionSet projections;
  TruthBundle truth;
};

/// View i is acquired at angle theta_i and time index i.
SimResult make_dataset(const SimSpec& spec, bool parallel = true);

/// The committed desk-scale fixture: 60 views, 128x128 detector @ 1.6 mm,
/// sid 1000 / sdd 1536, half-fan offset 58 mm, ~20 blobs, rank-2 FFD truth
/// driven by 4 variable-amplitude breathing cycles with drift.
SimSpec desk_fixture(std::uint64_t seed, bool apply_noise = false, bool model_mismatch = false);

/// Full paper-scale acquisition geometry (512x512 @ 0.8 mm, 310 views,
/// offset 116 mm).
ScanGeometry full_scan_geometry();

}  // namespace cbgs
