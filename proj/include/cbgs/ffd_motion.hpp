#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cbgs/error.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

/// Uniform cubic B-spline basis values at fractional coordinate u in [0, 1).
struct BsplineBasis {
  std::array<double, 4> w;
};

BsplineBasis bspline_weights(double u);
BsplineBasis bspline_dweights(double u);
BsplineBasis bspline_d2weights(double u);

/// Control-point lattice of per-rank displacement fields, with optional
/// per-rank log-scale and quaternion delta channels for the decoupled
/// (attribute-independent) motion mode. Storage is x-fastest per rank.
struct SpatialLattice {
  Vec3i dims = Vec3i::Zero();
  Vec3 spacing = Vec3::Zero();  // mm per axis
  Vec3 origin = Vec3::Zero();   // world position of control point (0,0,0)
  int ranks = 0;
  bool has_attribute_channels = false;

  std::vector<double> disp;        // [rank][k][j][i][3], mm
  std::vector<double> scale_delta; // [rank][k][j][i][3], log-mm deltas
  std::vector<double> quat_delta;  // [rank][k][j][i][4]

  std::size_t nodes() const { return std::size_t(dims.x()) * dims.y() * dims.z(); }
  std::size_t node_index(int i, int j, int k) const {
    return (std::size_t(k) * dims.y() + j) * dims.x() + i;
  }
  std::size_t disp_offset(int rank, std::size_t node) const { return (std::size_t(rank) * nodes() + node) * 3; }
  std::size_t scale_offset(int rank, std::size_t node) const { return (std::size_t(rank) * nodes() + node) * 3; }
  std::size_t quat_offset(int rank, std::size_t node) const { return (std::size_t(rank) * nodes() + node) * 4; }

  /// World-space box inside which the 4x4x4 support is complete.
  Vec3 interior_min() const { return origin + spacing; }
  Vec3 interior_max() const { return origin + spacing.cwiseProduct((dims.cast<double>() - 2.0 * Vec3::Ones())); }

  /// Lattice covering [box_min, box_max] with a one-spacing margin so every
  /// query inside the box has full support.
  static SpatialLattice cover(const Vec3& box_min, const Vec3& box_max, const Vec3& spacing,
                              int ranks, bool attribute_channels);
};

/// Interpolation stencil at a point: base control index and per-axis basis
/// values with first and second derivatives (already divided by spacing).
struct LatticeStencil {
  int base[3] = {0, 0, 0};
  double w[3][4] = {};
  double dw[3][4] = {};
  double d2w[3][4] = {};
  bool clamped = false;
};

LatticeStencil lattice_stencil(const SpatialLattice& lattice, const Vec3& x);

/// u_r(x): tensor-product interpolation of the rank-r displacement field.
Vec3 interp_disp(const SpatialLattice& lattice, const LatticeStencil& st, int rank);
/// (grad u_r)(x), entry (a, b) = d u_a / d x_b.
Mat3 interp_disp_gradient(const SpatialLattice& lattice, const LatticeStencil& st, int rank);
/// Hessian: out[a](b, c) = d^2 u_a / (d x_b d x_c).
std::array<Mat3, 3> interp_disp_hessian(const SpatialLattice& lattice, const LatticeStencil& st, int rank);

Vec3 interp_scale_delta(const SpatialLattice& lattice, const LatticeStencil& st, int rank);
Mat3 interp_scale_delta_gradient(const SpatialLattice& lattice, const LatticeStencil& st, int rank);
Vec4 interp_quat_delta(const SpatialLattice& lattice, const LatticeStencil& st, int rank);
Eigen::Matrix<double, 4, 3> interp_quat_delta_gradient(const SpatialLattice& lattice,
                                                       const LatticeStencil& st, int rank);

/// Convenience wrappers evaluating the stencil internally.
Vec3 spatial_basis(const SpatialLattice& lattice, const Vec3& x, int rank, bool* clamped = nullptr);
Mat3 spatial_basis_gradient(const SpatialLattice& lattice, const Vec3& x, int rank,
                            bool* clamped = nullptr);

/// Scalar cubic B-spline channels on a uniform 1D grid covering the
/// acquisition time range with one padding control at each end.
struct TemporalSpline {
  int channels = 0;
  int n_ctrl = 0;
  double t_min = 0.0;
  double dt = 1.0;  // control spacing in time indices
  std::vector<double> ctrl;  // [channel][n_ctrl]

  double& at(int channel, int j) { return ctrl[std::size_t(channel) * n_ctrl + j]; }
  double at(int channel, int j) const { return ctrl[std::size_t(channel) * n_ctrl + j]; }

  static TemporalSpline make(int channels, double t_min, double t_max, double spacing);
};

struct TemporalStencil {
  int base = 0;
  double w[4] = {};
  double dw[4] = {};
};

/// Throws NumericError when t lies outside [t_min, covered max].
TemporalStencil temporal_stencil(const TemporalSpline& spline, double t);

/// omega_c(t) for every channel.
std::vector<double> temporal_weights(const TemporalSpline& spline, double t);

/// The low-rank spatio-temporal motion model
///   D(x, t) = x + sum_r omega_r(t) u_r(x),
///   K(x, t) = I + sum_r omega_r(t) grad u_r(x).
struct FFDMotionModel {
  SpatialLattice lattice;
  TemporalSpline temporal;

  int ranks() const { return lattice.ranks; }
  void validate() const {
    if (lattice.ranks != temporal.channels) {
      throw ValidationError("lattice rank count must equal temporal channel count");
    }
    if (lattice.dims.minCoeff() < 4) {
      throw ValidationError("lattice needs at least 4 control points per axis");
    }
  }
};

Vec3 displacement(const FFDMotionModel& model, const Vec3& x, double t);
Mat3 motion_jacobian(const FFDMotionModel& model, const Vec3& x, double t);

/// Gradient accumulators shaped like the model parameters.
struct MotionGrads {
  std::vector<double> disp;
  std::vector<double> scale_delta;
  std::vector<double> quat_delta;
  std::vector<double> temporal;

  static MotionGrads zeros_like(const FFDMotionModel& model);
  void add(const MotionGrads& other);
};

/// Exact adjoint of (displacement, jacobian) at one point: scatters into
/// lattice and temporal gradients and returns dL/dx (including the
/// second-order term through dK/dx).
Vec3 motion_backward(const FFDMotionModel& model, const Vec3& x, double t, const Vec3& d_disp,
                     const Mat3& d_jac, MotionGrads& grads);

}  // namespace cbgs
