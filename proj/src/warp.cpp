#include "cbgs/warp.hpp"

#include <omp.h>

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace cbgs {

const char* motion_mode_name(MotionMode mode) {
  switch (mode) {
    case MotionMode::kDi: return "di";
    case MotionMode::kDecoupledFfd: return "decoupled";
    case MotionMode::kPerGaussian: return "pergaussian";
  }
  return "unknown";
}

MotionMode motion_mode_from_name(const std::string& name) {
  if (name == "di") return MotionMode::kDi;
  if (name == "decoupled") return MotionMode::kDecoupledFfd;
  if (name == "pergaussian") return MotionMode::kPerGaussian;
  throw ValidationError("unknown motion mode '" + name + "' (di|decoupled|pergaussian)");
}

namespace {

// Floor the singular values of K at kJacobianSigmaFloor. Keeps the
// congruence K Sigma K^T positive definite through transient folds; the
// backward pass treats the floor as a pass-through.
Mat3 floor_jacobian(const Mat3& k) {
  Eigen::JacobiSVD<Mat3> svd(k, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd.singularValues().cwiseMax(kJacobianSigmaFloor);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

void resize_snapshot(CloudSnapshot& snap, std::size_t n) {
  snap.mean.resize(n);
  snap.cov.resize(n);
  snap.rho.resize(n);
}

}  // namespace

CloudSnapshot warp_di(const GaussianCloud& cloud, const FFDMotionModel& model, double t,
                      bool parallel) {
  model.validate();
  std::size_t n = cloud.size();
  CloudSnapshot snap;
  snap.time = t;
  snap.mode = MotionMode::kDi;
  resize_snapshot(snap, n);
  snap.stencils.resize(n);
  snap.jac.resize(n);
  snap.floored.assign(n, 0);
  snap.omega = temporal_weights(model.temporal, t);

  long folds = 0, clamps = 0;
#pragma omp parallel for schedule(static) reduction(+ : folds, clamps) if (parallel)
  for (long long i = 0; i < (long long)n; ++i) {
    LatticeStencil st = lattice_stencil(model.lattice, cloud.mean[i]);
    if (st.clamped) ++clamps;
    Vec3 mu = cloud.mean[i];
    Mat3 k = Mat3::Identity();
    for (int r = 0; r < model.ranks(); ++r) {
      mu += snap.omega[r] * interp_disp(model.lattice, st, r);
      k += snap.omega[r] * interp_disp_gradient(model.lattice, st, r);
    }
    if (k.determinant() <= kJacobianDetFloor) {
      k = floor_jacobian(k);
      snap.floored[i] = 1;
      ++folds;
    }
    Mat3 cov0 = assemble_covariance(cloud.quat[i], cloud.log_scale[i], cloud.clamp);
    snap.stencils[i] = st;
    snap.jac[i] = k;
    snap.mean[i] = mu;
    snap.cov[i] = k * cov0 * k.transpose();
    snap.rho[i] = activate_density(cloud.rho_raw[i]);
  }
  snap.fold_incidents = folds;
  snap.clamp_incidents = clamps;
  return snap;
}

CloudSnapshot warp_decoupled(const GaussianCloud& cloud, const FFDMotionModel& model, double t,
                             bool parallel) {
  model.validate();
  if (!model.lattice.has_attribute_channels) {
    throw ValidationError("decoupled mode requires lattice attribute channels");
  }
  std::size_t n = cloud.size();
  CloudSnapshot snap;
  snap.time = t;
  snap.mode = MotionMode::kDecoupledFfd;
  resize_snapshot(snap, n);
  snap.stencils.resize(n);
  snap.quat_pre.resize(n);
  snap.log_scale_t.resize(n);
  snap.omega = temporal_weights(model.temporal, t);

  long clamps = 0;
#pragma omp parallel for schedule(static) reduction(+ : clamps) if (parallel)
  for (long long i = 0; i < (long long)n; ++i) {
    LatticeStencil st = lattice_stencil(model.lattice, cloud.mean[i]);
    if (st.clamped) ++clamps;
    Vec3 mu = cloud.mean[i];
    Vec3 s = cloud.log_scale[i];
    Vec4 q = cloud.quat[i];
    for (int r = 0; r < model.ranks(); ++r) {
      double w = snap.omega[r];
      mu += w * interp_disp(model.lattice, st, r);
      s += w * interp_scale_delta(model.lattice, st, r);
      q += w * interp_quat_delta(model.lattice, st, r);
    }
    snap.stencils[i] = st;
    snap.quat_pre[i] = q;
    snap.log_scale_t[i] = s;
    snap.mean[i] = mu;
    snap.cov[i] = assemble_covariance(q, s, cloud.clamp);
    snap.rho[i] = activate_density(cloud.rho_raw[i]);
  }
  snap.clamp_incidents = clamps;
  return snap;
}

CloudSnapshot warp_per_gaussian(const GaussianCloud& cloud, const TemporalSpline& temporal,
                                const PerGaussianWeights& weights, double t, bool parallel) {
  std::size_t n = cloud.size();
  if (weights.kernels() != n || weights.ranks != temporal.channels) {
    throw ValidationError("per-gaussian weights missing or inconsistent with the cloud");
  }
  CloudSnapshot snap;
  snap.time = t;
  snap.mode = MotionMode::kPerGaussian;
  resize_snapshot(snap, n);
  snap.quat_pre.resize(n);
  snap.log_scale_t.resize(n);
  snap.omega = temporal_weights(temporal, t);

#pragma omp parallel for schedule(static) if (parallel)
  for (long long i = 0; i < (long long)n; ++i) {
    const double* wk = weights.kernel_data(i);
    Vec3 mu = cloud.mean[i];
    Vec3 s = cloud.log_scale[i];
    Vec4 q = cloud.quat[i];
    for (int r = 0; r < weights.ranks; ++r) {
      const double* row = wk + r * PerGaussianWeights::kStride;
      double w = snap.omega[r];
      mu += w * Vec3(row[0], row[1], row[2]);
      s += w * Vec3(row[3], row[4], row[5]);
      q += w * Vec4(row[6], row[7], row[8], row[9]);
    }
    snap.quat_pre[i] = q;
    snap.log_scale_t[i] = s;
    snap.mean[i] = mu;
    snap.cov[i] = assemble_covariance(q, s, cloud.clamp);
    snap.rho[i] = activate_density(cloud.rho_raw[i]);
  }
  return snap;
}

CloudSnapshot warp(const GaussianCloud& cloud, const MotionState& motion, double t,
                   bool parallel) {
  switch (motion.mode) {
    case MotionMode::kDi: return warp_di(cloud, motion.model, t, parallel);
    case MotionMode::kDecoupledFfd: return warp_decoupled(cloud, motion.model, t, parallel);
    case MotionMode::kPerGaussian:
      return warp_per_gaussian(cloud, motion.model.temporal, motion.weights, t, parallel);
  }
  throw ValidationError("unknown motion mode");
}

CloudSnapshot static_snapshot(const GaussianCloud& cloud) {
  CloudSnapshot snap;
  snap.mode = MotionMode::kDi;
  resize_snapshot(snap, cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    snap.mean[i] = cloud.mean[i];
    snap.cov[i] = assemble_covariance(cloud.quat[i], cloud.log_scale[i], cloud.clamp);
    snap.rho[i] = activate_density(cloud.rho_raw[i]);
  }
  return snap;
}

namespace {

struct ThreadMotionGrads {
  MotionGrads grads;
  bool used = false;
};

void check_cache(const GaussianCloud& cloud, const CloudSnapshot& snap, MotionMode mode) {
  if (snap.size() != cloud.size() || snap.mode != mode) {
    throw ValidationError("warp backward called with a stale or mismatched snapshot cache");
  }
}

// Scatter d(mu_t)/d(control displacement) for one kernel: nodes get
// omega_r * w * dD (no gradient-weight term; K feeds no covariance here).
void scatter_disp_only(const SpatialLattice& lat, const LatticeStencil& st, int rank,
                       double omega, const Vec3& d_disp, std::vector<double>& out) {
  double* gbase = out.data() + lat.disp_offset(rank, 0);
  for (int nz = 0; nz < 4; ++nz) {
    int k = st.base[2] + nz;
    for (int my = 0; my < 4; ++my) {
      int j = st.base[1] + my;
      std::size_t row = lat.node_index(st.base[0], j, k);
      double* node = gbase + row * 3;
      for (int l = 0; l < 4; ++l, node += 3) {
        double w = omega * st.w[0][l] * st.w[1][my] * st.w[2][nz];
        node[0] += w * d_disp[0];
        node[1] += w * d_disp[1];
        node[2] += w * d_disp[2];
      }
    }
  }
}

template <int Width>
void scatter_channel(const SpatialLattice& lat, const LatticeStencil& st, std::size_t offset,
                     double omega, const double* d_value, std::vector<double>& out) {
  double* gbase = out.data() + offset;
  for (int nz = 0; nz < 4; ++nz) {
    int k = st.base[2] + nz;
    for (int my = 0; my < 4; ++my) {
      int j = st.base[1] + my;
      std::size_t row = lat.node_index(st.base[0], j, k);
      double* node = gbase + row * Width;
      for (int l = 0; l < 4; ++l, node += Width) {
        double w = omega * st.w[0][l] * st.w[1][my] * st.w[2][nz];
        for (int c = 0; c < Width; ++c) node[c] += w * d_value[c];
      }
    }
  }
}

}  // namespace

WarpGrads warp_backward(const GaussianCloud& cloud, const MotionState& motion,
                        const CloudSnapshot& snap, std::span<const Vec3> d_mean,
                        std::span<const Mat3> d_cov, std::span<const double> d_rho,
                        bool parallel) {
  check_cache(cloud, snap, motion.mode);
  std::size_t n = cloud.size();
  if (d_mean.size() != n || d_cov.size() != n || d_rho.size() != n) {
    throw ValidationError("gradient spans do not match the cloud size");
  }

  WarpGrads grads;
  grads.cloud.rho_raw.assign(n, 0.0);
  grads.cloud.mean.assign(n, Vec3::Zero());
  grads.cloud.quat.assign(n, Vec4::Zero());
  grads.cloud.log_scale.assign(n, Vec3::Zero());
  grads.motion = MotionGrads::zeros_like(motion.model);
  if (motion.mode == MotionMode::kPerGaussian) {
    grads.pg_weights.assign(motion.weights.values.size(), 0.0);
  }

  const TemporalSpline& temporal = motion.model.temporal;
  TemporalStencil ts = temporal_stencil(temporal, snap.time);
  const std::vector<double>& omega = snap.omega;
  const SpatialLattice& lat = motion.model.lattice;
  int ranks = temporal.channels;

  int max_threads = parallel ? omp_get_max_threads() : 1;
  std::vector<ThreadMotionGrads> partials(max_threads);
  for (auto& p : partials) p.grads = MotionGrads::zeros_like(motion.model);

#pragma omp parallel for schedule(static) num_threads(max_threads) if (parallel)
  for (long long i = 0; i < (long long)n; ++i) {
    ThreadMotionGrads& local = partials[omp_get_thread_num()];
    local.used = true;
    MotionGrads& mg = local.grads;

    grads.cloud.rho_raw[i] = d_rho[i] * activate_density_grad(cloud.rho_raw[i]);
    Mat3 g = 0.5 * (d_cov[i] + d_cov[i].transpose());

    if (motion.mode == MotionMode::kDi) {
      const LatticeStencil& st = snap.stencils[i];
      const Mat3& k = snap.jac[i];
      Mat3 cov0 = assemble_covariance(cloud.quat[i], cloud.log_scale[i], cloud.clamp);

      Mat3 d_cov0 = k.transpose() * g * k;
      Mat3 d_k = 2.0 * g * k * cov0;

      Vec4 dq;
      Vec3 ds;
      assemble_covariance_backward(cloud.quat[i], cloud.log_scale[i], cloud.clamp, d_cov0, dq, ds);
      grads.cloud.quat[i] = dq;
      grads.cloud.log_scale[i] = ds;

      // Motion adjoint with the cached stencil.
      Vec3 dx = d_mean[i];
      for (int r = 0; r < ranks; ++r) {
        Vec3 u = interp_disp(lat, st, r);
        Mat3 grad_u = interp_disp_gradient(lat, st, r);
        double d_omega = u.dot(d_mean[i]) + (grad_u.array() * d_k.array()).sum();
        for (int l = 0; l < 4; ++l) {
          mg.temporal[std::size_t(r) * temporal.n_ctrl + ts.base + l] += d_omega * ts.w[l];
        }
        double* gbase = mg.disp.data() + lat.disp_offset(r, 0);
        for (int nz = 0; nz < 4; ++nz) {
          int kk = st.base[2] + nz;
          for (int my = 0; my < 4; ++my) {
            int jj = st.base[1] + my;
            std::size_t row = lat.node_index(st.base[0], jj, kk);
            double* node = gbase + row * 3;
            for (int l = 0; l < 4; ++l, node += 3) {
              double wx = st.w[0][l], wy = st.w[1][my], wz = st.w[2][nz];
              double w = omega[r] * wx * wy * wz;
              double gx = omega[r] * st.dw[0][l] * wy * wz;
              double gy = omega[r] * wx * st.dw[1][my] * wz;
              double gz = omega[r] * wx * wy * st.dw[2][nz];
              for (int a = 0; a < 3; ++a) {
                node[a] += w * d_mean[i][a] + gx * d_k(a, 0) + gy * d_k(a, 1) + gz * d_k(a, 2);
              }
            }
          }
        }
        if (!st.clamped) {
          dx += omega[r] * (grad_u.transpose() * d_mean[i]);
          std::array<Mat3, 3> hess = interp_disp_hessian(lat, st, r);
          for (int a = 0; a < 3; ++a) {
            dx += omega[r] * (hess[a] * d_k.row(a).transpose());
          }
        }
      }
      grads.cloud.mean[i] = dx;
    } else if (motion.mode == MotionMode::kDecoupledFfd) {
      const LatticeStencil& st = snap.stencils[i];
      Vec4 dq_pre;
      Vec3 ds_t;
      assemble_covariance_backward(snap.quat_pre[i], snap.log_scale_t[i], cloud.clamp, g, dq_pre,
                                   ds_t);
      grads.cloud.quat[i] = dq_pre;
      grads.cloud.log_scale[i] = ds_t;

      Vec3 dx = d_mean[i];
      for (int r = 0; r < ranks; ++r) {
        Vec3 u = interp_disp(lat, st, r);
        Mat3 grad_u = interp_disp_gradient(lat, st, r);
        Vec3 dscale = interp_scale_delta(lat, st, r);
        Vec4 dquat = interp_quat_delta(lat, st, r);

        double d_omega = u.dot(d_mean[i]) + dscale.dot(ds_t) + dquat.dot(dq_pre);
        for (int l = 0; l < 4; ++l) {
          mg.temporal[std::size_t(r) * temporal.n_ctrl + ts.base + l] += d_omega * ts.w[l];
        }
        scatter_disp_only(lat, st, r, omega[r], d_mean[i], mg.disp);
        scatter_channel<3>(lat, st, lat.scale_offset(r, 0), omega[r], ds_t.data(), mg.scale_delta);
        scatter_channel<4>(lat, st, lat.quat_offset(r, 0), omega[r], dq_pre.data(), mg.quat_delta);

        if (!st.clamped) {
          dx += omega[r] * (grad_u.transpose() * d_mean[i]);
          dx += omega[r] * (interp_scale_delta_gradient(lat, st, r).transpose() * ds_t);
          dx += omega[r] * (interp_quat_delta_gradient(lat, st, r).transpose() * Eigen::Vector4d(dq_pre));
        }
      }
      grads.cloud.mean[i] = dx;
    } else {  // kPerGaussian
      Vec4 dq_pre;
      Vec3 ds_t;
      assemble_covariance_backward(snap.quat_pre[i], snap.log_scale_t[i], cloud.clamp, g, dq_pre,
                                   ds_t);
      grads.cloud.quat[i] = dq_pre;
      grads.cloud.log_scale[i] = ds_t;
      grads.cloud.mean[i] = d_mean[i];

      const double* wk = motion.weights.kernel_data(i);
      double* dwk = grads.pg_weights.data() + (wk - motion.weights.values.data());
      for (int r = 0; r < ranks; ++r) {
        const double* row = wk + r * PerGaussianWeights::kStride;
        double* drow = dwk + r * PerGaussianWeights::kStride;
        double w = omega[r];
        double d_omega = 0.0;
        for (int c = 0; c < 3; ++c) {
          drow[c] += w * d_mean[i][c];
          d_omega += row[c] * d_mean[i][c];
        }
        for (int c = 0; c < 3; ++c) {
          drow[3 + c] += w * ds_t[c];
          d_omega += row[3 + c] * ds_t[c];
        }
        for (int c = 0; c < 4; ++c) {
          drow[6 + c] += w * dq_pre[c];
          d_omega += row[6 + c] * dq_pre[c];
        }
        for (int l = 0; l < 4; ++l) {
          mg.temporal[std::size_t(r) * temporal.n_ctrl + ts.base + l] += d_omega * ts.w[l];
        }
      }
    }
  }

  // Reduce per-thread motion buffers in thread order.
  for (const ThreadMotionGrads& p : partials) {
    if (p.used) grads.motion.add(p.grads);
  }
  return grads;
}

PerGaussianWeights weights_from_lattice(const GaussianCloud& cloud, const FFDMotionModel& model) {
  model.validate();
  if (!model.lattice.has_attribute_channels) {
    throw ValidationError("weights_from_lattice requires lattice attribute channels");
  }
  PerGaussianWeights out = PerGaussianWeights::zeros(cloud.size(), model.ranks());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    LatticeStencil st = lattice_stencil(model.lattice, cloud.mean[i]);
    double* wk = out.kernel_data(i);
    for (int r = 0; r < model.ranks(); ++r) {
      double* row = wk + r * PerGaussianWeights::kStride;
      Vec3 u = interp_disp(model.lattice, st, r);
      Vec3 ds = interp_scale_delta(model.lattice, st, r);
      Vec4 dq = interp_quat_delta(model.lattice, st, r);
      for (int c = 0; c < 3; ++c) row[c] = u[c];
      for (int c = 0; c < 3; ++c) row[3 + c] = ds[c];
      for (int c = 0; c < 4; ++c) row[6 + c] = dq[c];
    }
  }
  return out;
}

}  // namespace cbgs
