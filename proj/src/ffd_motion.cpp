#include "cbgs/ffd_motion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cbgs {

namespace {

void check_unit_interval(double u) {
  if (!(u >= 0.0 && u < 1.0)) {
    std::ostringstream err;
    err << "B-spline fractional coordinate " << u << " outside [0, 1)";
    throw NumericError(err.str());
  }
}

}  // namespace

BsplineBasis bspline_weights(double u) {
  check_unit_interval(u);
  double v = 1.0 - u;
  double u2 = u * u, u3 = u2 * u;
  BsplineBasis b;
  b.w[0] = v * v * v / 6.0;
  b.w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
  b.w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
  b.w[3] = u3 / 6.0;
  return b;
}

BsplineBasis bspline_dweights(double u) {
  check_unit_interval(u);
  double v = 1.0 - u;
  double u2 = u * u;
  BsplineBasis b;
  b.w[0] = -0.5 * v * v;
  b.w[1] = 0.5 * (3.0 * u2 - 4.0 * u);
  b.w[2] = 0.5 * (-3.0 * u2 + 2.0 * u + 1.0);
  b.w[3] = 0.5 * u2;
  return b;
}

BsplineBasis bspline_d2weights(double u) {
  check_unit_interval(u);
  BsplineBasis b;
  b.w[0] = 1.0 - u;
  b.w[1] = 3.0 * u - 2.0;
  b.w[2] = -3.0 * u + 1.0;
  b.w[3] = u;
  return b;
}

SpatialLattice SpatialLattice::cover(const Vec3& box_min, const Vec3& box_max, const Vec3& spacing,
                                     int ranks, bool attribute_channels) {
  if ((spacing.array() <= 0.0).any()) throw ValidationError("lattice spacing must be positive");
  if (ranks < 1) throw ValidationError("lattice needs at least one rank");
  SpatialLattice lat;
  lat.spacing = spacing;
  lat.origin = box_min - spacing;
  lat.ranks = ranks;
  lat.has_attribute_channels = attribute_channels;
  for (int a = 0; a < 3; ++a) {
    double extent = std::max(0.0, box_max[a] - box_min[a]);
    lat.dims[a] = std::max(4, int(std::ceil(extent / spacing[a])) + 4);
  }
  lat.disp.assign(std::size_t(ranks) * lat.nodes() * 3, 0.0);
  if (attribute_channels) {
    lat.scale_delta.assign(std::size_t(ranks) * lat.nodes() * 3, 0.0);
    lat.quat_delta.assign(std::size_t(ranks) * lat.nodes() * 4, 0.0);
  }
  return lat;
}

LatticeStencil lattice_stencil(const SpatialLattice& lattice, const Vec3& x) {
  LatticeStencil st;
  for (int a = 0; a < 3; ++a) {
    double p = (x[a] - lattice.origin[a]) / lattice.spacing[a];
    double lo = 1.0;
    double hi = double(lattice.dims[a] - 2) - 1e-9;
    double pc = std::clamp(p, lo, hi);
    if (pc != p) st.clamped = true;
    int cell = int(std::floor(pc));
    cell = std::clamp(cell, 1, lattice.dims[a] - 3);
    double u = pc - double(cell);
    st.base[a] = cell - 1;
    BsplineBasis w = bspline_weights(u);
    BsplineBasis dw = bspline_dweights(u);
    BsplineBasis d2w = bspline_d2weights(u);
    double inv_h = 1.0 / lattice.spacing[a];
    for (int l = 0; l < 4; ++l) {
      st.w[a][l] = w.w[l];
      st.dw[a][l] = dw.w[l] * inv_h;
      st.d2w[a][l] = d2w.w[l] * inv_h * inv_h;
    }
  }
  return st;
}

namespace {

template <int Width, typename Out>
void interp_channel(const SpatialLattice& lattice, const LatticeStencil& st,
                    const std::vector<double>& values, std::size_t rank_stride, int rank,
                    Out& value, Eigen::Matrix<double, Width, 3>* gradient) {
  value.setZero();
  if (gradient) gradient->setZero();
  const double* base = values.data() + std::size_t(rank) * rank_stride;
  for (int n = 0; n < 4; ++n) {
    int k = st.base[2] + n;
    for (int m = 0; m < 4; ++m) {
      int j = st.base[1] + m;
      std::size_t row = lattice.node_index(st.base[0], j, k);
      const double* node = base + row * Width;
      for (int l = 0; l < 4; ++l, node += Width) {
        double wx = st.w[0][l], wy = st.w[1][m], wz = st.w[2][n];
        double w = wx * wy * wz;
        for (int c = 0; c < Width; ++c) value[c] += w * node[c];
        if (gradient) {
          double gx = st.dw[0][l] * wy * wz;
          double gy = wx * st.dw[1][m] * wz;
          double gz = wx * wy * st.dw[2][n];
          for (int c = 0; c < Width; ++c) {
            (*gradient)(c, 0) += gx * node[c];
            (*gradient)(c, 1) += gy * node[c];
            (*gradient)(c, 2) += gz * node[c];
          }
        }
      }
    }
  }
}

}  // namespace

Vec3 interp_disp(const SpatialLattice& lattice, const LatticeStencil& st, int rank) {
  Vec3 value;
  interp_channel<3, Vec3>(lattice, st, lattice.disp, lattice.nodes() * 3, rank, value, nullptr);
  return value;
}

Mat3 interp_disp_gradient(const SpatialLattice& lattice, const LatticeStencil& st, int rank) {
  Vec3 value;
  Eigen::Matrix<double, 3, 3> grad;
  interp_channel<3, Vec3>(lattice, st, lattice.disp, lattice.nodes() * 3, rank, value, &grad);
  return grad;
}

std::array<Mat3, 3> interp_disp_hessian(const SpatialLattice& lattice, const LatticeStencil& st,
                                        int rank) {
  std::array<Mat3, 3> hess = {Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
  const double* base = lattice.disp.data() + lattice.disp_offset(rank, 0);
  for (int n = 0; n < 4; ++n) {
    int k = st.base[2] + n;
    for (int m = 0; m < 4; ++m) {
      int j = st.base[1] + m;
      std::size_t row = lattice.node_index(st.base[0], j, k);
      const double* node = base + row * 3;
      for (int l = 0; l < 4; ++l, node += 3) {
        double wx = st.w[0][l], wy = st.w[1][m], wz = st.w[2][n];
        double dx = st.dw[0][l], dy = st.dw[1][m], dz = st.dw[2][n];
        double wxx = st.d2w[0][l] * wy * wz;
        double wyy = wx * st.d2w[1][m] * wz;
        double wzz = wx * wy * st.d2w[2][n];
        double wxy = dx * dy * wz;
        double wxz = dx * wy * dz;
        double wyz = wx * dy * dz;
        for (int a = 0; a < 3; ++a) {
          double v = node[a];
          hess[a](0, 0) += wxx * v;
          hess[a](1, 1) += wyy * v;
          hess[a](2, 2) += wzz * v;
          hess[a](0, 1) += wxy * v;
          hess[a](1, 0) += wxy * v;
          hess[a](0, 2) += wxz * v;
          hess[a](2, 0) += wxz * v;
          hess[a](1, 2) += wyz * v;
          hess[a](2, 1) += wyz * v;
        }
      }
    }
  }
  return hess;
}

Vec3 interp_scale_delta(const SpatialLattice& lattice, const LatticeStencil& st, int rank) {
  Vec3 value;
  interp_channel<3, Vec3>(lattice, st, lattice.scale_delta, lattice.nodes() * 3, rank, value, nullptr);
  return value;
}

Mat3 interp_scale_delta_gradient(const SpatialLattice& lattice, const LatticeStencil& st, int rank) {
  Vec3 value;
  Eigen::Matrix<double, 3, 3> grad;
  interp_channel<3, Vec3>(lattice, st, lattice.scale_delta, lattice.nodes() * 3, rank, value, &grad);
  return grad;
}

Vec4 interp_quat_delta(const SpatialLattice& lattice, const LatticeStencil& st, int rank) {
  Vec4 value;
  interp_channel<4, Vec4>(lattice, st, lattice.quat_delta, lattice.nodes() * 4, rank, value, nullptr);
  return value;
}

Eigen::Matrix<double, 4, 3> interp_quat_delta_gradient(const SpatialLattice& lattice,
                                                       const LatticeStencil& st, int rank) {
  Vec4 value;
  Eigen::Matrix<double, 4, 3> grad;
  interp_channel<4, Vec4>(lattice, st, lattice.quat_delta, lattice.nodes() * 4, rank, value, &grad);
  return grad;
}

Vec3 spatial_basis(const SpatialLattice& lattice, const Vec3& x, int rank, bool* clamped) {
  LatticeStencil st = lattice_stencil(lattice, x);
  if (clamped) *clamped = st.clamped;
  return interp_disp(lattice, st, rank);
}

Mat3 spatial_basis_gradient(const SpatialLattice& lattice, const Vec3& x, int rank, bool* clamped) {
  LatticeStencil st = lattice_stencil(lattice, x);
  if (clamped) *clamped = st.clamped;
  return interp_disp_gradient(lattice, st, rank);
}

TemporalSpline TemporalSpline::make(int channels, double t_min, double t_max, double spacing) {
  if (channels < 1) throw ValidationError("temporal spline needs at least one channel");
  if (!(spacing > 0.0)) throw ValidationError("temporal control spacing must be positive");
  if (!(t_max >= t_min)) throw ValidationError("empty temporal domain");
  TemporalSpline sp;
  sp.channels = channels;
  sp.t_min = t_min;
  sp.dt = spacing;
  int cells = std::max(1, int(std::ceil((t_max - t_min) / spacing)));
  sp.n_ctrl = cells + 3;
  sp.ctrl.assign(std::size_t(channels) * sp.n_ctrl, 0.0);
  return sp;
}

TemporalStencil temporal_stencil(const TemporalSpline& spline, double t) {
  double p = 1.0 + (t - spline.t_min) / spline.dt;
  double hi = double(spline.n_ctrl - 2);
  if (p < 1.0 - 1e-9 || p > hi + 1e-9) {
    std::ostringstream err;
    err << "time " << t << " outside the temporal spline domain";
    throw NumericError(err.str());
  }
  double pc = std::clamp(p, 1.0, hi - 1e-9);
  int cell = std::clamp(int(std::floor(pc)), 1, spline.n_ctrl - 3);
  double u = pc - double(cell);
  BsplineBasis w = bspline_weights(u);
  BsplineBasis dw = bspline_dweights(u);
  TemporalStencil st;
  st.base = cell - 1;
  for (int l = 0; l < 4; ++l) {
    st.w[l] = w.w[l];
    st.dw[l] = dw.w[l] / spline.dt;
  }
  return st;
}

std::vector<double> temporal_weights(const TemporalSpline& spline, double t) {
  TemporalStencil st = temporal_stencil(spline, t);
  std::vector<double> omega(spline.channels, 0.0);
  for (int c = 0; c < spline.channels; ++c) {
    double acc = 0.0;
    for (int l = 0; l < 4; ++l) acc += st.w[l] * spline.at(c, st.base + l);
    omega[c] = acc;
  }
  return omega;
}

Vec3 displacement(const FFDMotionModel& model, const Vec3& x, double t) {
  LatticeStencil st = lattice_stencil(model.lattice, x);
  std::vector<double> omega = temporal_weights(model.temporal, t);
  Vec3 d = x;
  for (int r = 0; r < model.ranks(); ++r) d += omega[r] * interp_disp(model.lattice, st, r);
  return d;
}

Mat3 motion_jacobian(const FFDMotionModel& model, const Vec3& x, double t) {
  LatticeStencil st = lattice_stencil(model.lattice, x);
  std::vector<double> omega = temporal_weights(model.temporal, t);
  Mat3 k = Mat3::Identity();
  for (int r = 0; r < model.ranks(); ++r) {
    k += omega[r] * interp_disp_gradient(model.lattice, st, r);
  }
  return k;
}

MotionGrads MotionGrads::zeros_like(const FFDMotionModel& model) {
  MotionGrads g;
  g.disp.assign(model.lattice.disp.size(), 0.0);
  g.scale_delta.assign(model.lattice.scale_delta.size(), 0.0);
  g.quat_delta.assign(model.lattice.quat_delta.size(), 0.0);
  g.temporal.assign(model.temporal.ctrl.size(), 0.0);
  return g;
}

void MotionGrads::add(const MotionGrads& other) {
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] += other.disp[i];
  for (std::size_t i = 0; i < scale_delta.size(); ++i) scale_delta[i] += other.scale_delta[i];
  for (std::size_t i = 0; i < quat_delta.size(); ++i) quat_delta[i] += other.quat_delta[i];
  for (std::size_t i = 0; i < temporal.size(); ++i) temporal[i] += other.temporal[i];
}

Vec3 motion_backward(const FFDMotionModel& model, const Vec3& x, double t, const Vec3& d_disp,
                     const Mat3& d_jac, MotionGrads& grads) {
  const SpatialLattice& lat = model.lattice;
  LatticeStencil st = lattice_stencil(lat, x);
  TemporalStencil ts = temporal_stencil(model.temporal, t);
  std::vector<double> omega = temporal_weights(model.temporal, t);

  Vec3 dx = d_disp;  // identity part of D
  for (int r = 0; r < model.ranks(); ++r) {
    Vec3 u = interp_disp(lat, st, r);
    Mat3 grad_u = interp_disp_gradient(lat, st, r);

    // dL/domega_r = u_r . dD + <grad u_r, dK>.
    double d_omega = u.dot(d_disp) + (grad_u.array() * d_jac.array()).sum();
    for (int l = 0; l < 4; ++l) {
      grads.temporal[std::size_t(r) * model.temporal.n_ctrl + ts.base + l] += d_omega * ts.w[l];
    }

    // Control displacements.
    double* gbase = grads.disp.data() + lat.disp_offset(r, 0);
    for (int n = 0; n < 4; ++n) {
      int k = st.base[2] + n;
      for (int m = 0; m < 4; ++m) {
        int j = st.base[1] + m;
        std::size_t row = lat.node_index(st.base[0], j, k);
        double* node = gbase + row * 3;
        for (int l = 0; l < 4; ++l, node += 3) {
          double wx = st.w[0][l], wy = st.w[1][m], wz = st.w[2][n];
          double w = wx * wy * wz;
          double gx = st.dw[0][l] * wy * wz;
          double gy = wx * st.dw[1][m] * wz;
          double gz = wx * wy * st.dw[2][n];
          for (int a = 0; a < 3; ++a) {
            node[a] += omega[r] * (w * d_disp[a] +
                                   gx * d_jac(a, 0) + gy * d_jac(a, 1) + gz * d_jac(a, 2));
          }
        }
      }
    }

    // dL/dx: first order through u_r, second order through grad u_r.
    if (!st.clamped) {
      dx += omega[r] * (grad_u.transpose() * d_disp);
      std::array<Mat3, 3> hess = interp_disp_hessian(lat, st, r);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          double g = d_jac(a, b);
          if (g == 0.0) continue;
          dx += omega[r] * g * hess[a].row(b).transpose();
        }
      }
    }
  }
  return dx;
}

}  // namespace cbgs
