#pragma once

#include <cstdint>
#include <vector>

#include "cbgs/ffd_motion.hpp"
#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

enum class MotionMode {
  kDi,            // unified DVF: means transported, covariances by K Sigma K^T
  kDecoupledFfd,  // per-attribute lattice channels, shared bases
  kPerGaussian,   // per-kernel basis weights, no lattice
};

const char* motion_mode_name(MotionMode mode);
MotionMode motion_mode_from_name(const std::string& name);

/// Per-kernel motion attributes for kPerGaussian: per rank 3 displacement,
/// 3 log-scale delta and 4 quaternion delta values.
struct PerGaussianWeights {
  static constexpr int kStride = 10;
  int ranks = 0;
  std::vector<double> values;  // [kernel][rank][kStride]

  std::size_t kernels() const {
    return ranks == 0 ? 0 : values.size() / (std::size_t(ranks) * kStride);
  }
  double* kernel_data(std::size_t n) { return values.data() + n * std::size_t(ranks) * kStride; }
  const double* kernel_data(std::size_t n) const {
    return values.data() + n * std::size_t(ranks) * kStride;
  }
  static PerGaussianWeights zeros(std::size_t kernels, int ranks) {
    PerGaussianWeights w;
    w.ranks = ranks;
    w.values.assign(kernels * std::size_t(ranks) * kStride, 0.0);
    return w;
  }
};

/// Everything the reconstruction needs to evolve the cloud over time. In
/// kPerGaussian mode only `model.temporal` and `weights` are used.
struct MotionState {
  MotionMode mode = MotionMode::kDi;
  FFDMotionModel model;
  PerGaussianWeights weights;
};

/// The cloud transported to one time index, with the forward-pass caches the
/// backward pass consumes. Field `rho` is bit-identical to the activated
/// reference densities in every mode.
struct CloudSnapshot {
  double time = 0.0;
  MotionMode mode = MotionMode::kDi;
  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> rho;

  std::vector<double> omega;            // temporal weights at `time`
  std::vector<LatticeStencil> stencils; // kDi / kDecoupledFfd
  std::vector<Mat3> jac;                // kDi: K actually used (after flooring)
  std::vector<std::uint8_t> floored;    // kDi
  std::vector<Vec4> quat_pre;           // kDecoupledFfd / kPerGaussian, pre-normalization
  std::vector<Vec3> log_scale_t;        // kDecoupledFfd / kPerGaussian

  long fold_incidents = 0;
  long clamp_incidents = 0;

  KernelView view() const { return KernelView{mean, cov, rho}; }
  std::size_t size() const { return mean.size(); }
};

/// det(K) at or below this triggers singular-value flooring of K.
inline constexpr double kJacobianDetFloor = 1.25e-4;
inline constexpr double kJacobianSigmaFloor = 0.05;

CloudSnapshot warp_di(const GaussianCloud& cloud, const FFDMotionModel& model, double t,
                      bool parallel = true);
CloudSnapshot warp_decoupled(const GaussianCloud& cloud, const FFDMotionModel& model, double t,
                             bool parallel = true);
CloudSnapshot warp_per_gaussian(const GaussianCloud& cloud, const TemporalSpline& temporal,
                                const PerGaussianWeights& weights, double t, bool parallel = true);
CloudSnapshot warp(const GaussianCloud& cloud, const MotionState& motion, double t,
                   bool parallel = true);

/// Identity snapshot (no motion model involved).
CloudSnapshot static_snapshot(const GaussianCloud& cloud);

struct CloudGrads {
  std::vector<double> rho_raw;
  std::vector<Vec3> mean;
  std::vector<Vec4> quat;
  std::vector<Vec3> log_scale;
};

struct WarpGrads {
  CloudGrads cloud;
  MotionGrads motion;
  std::vector<double> pg_weights;
};

/// Exact adjoint of the selected warp mode. `snapshot` must come from the
/// matching forward call on the same cloud/motion (checked by size).
WarpGrads warp_backward(const GaussianCloud& cloud, const MotionState& motion,
                        const CloudSnapshot& snapshot, std::span<const Vec3> d_mean,
                        std::span<const Mat3> d_cov, std::span<const double> d_rho,
                        bool parallel = true);

/// Per-kernel weights equal to the lattice values interpolated at the kernel
/// means; with these, kPerGaussian reproduces kDecoupledFfd exactly.
PerGaussianWeights weights_from_lattice(const GaussianCloud& cloud, const FFDMotionModel& model);

}  // namespace cbgs
