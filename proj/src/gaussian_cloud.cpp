#include "cbgs/gaussian_cloud.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cbgs/rng.hpp"

namespace cbgs {

void GaussianCloud::reserve(std::size_t n) {
  rho_raw.reserve(n);
  mean.reserve(n);
  quat.reserve(n);
  log_scale.reserve(n);
}

void GaussianCloud::push_back(double raw, const Vec3& mu, const Vec4& q, const Vec3& s) {
  rho_raw.push_back(raw);
  mean.push_back(mu);
  quat.push_back(q);
  log_scale.push_back(s);
}

void GaussianCloud::filter(const std::vector<std::uint8_t>& keep) {
  std::size_t out = 0;
  for (std::size_t n = 0; n < size(); ++n) {
    if (!keep[n]) continue;
    rho_raw[out] = rho_raw[n];
    mean[out] = mean[n];
    quat[out] = quat[n];
    log_scale[out] = log_scale[n];
    ++out;
  }
  rho_raw.resize(out);
  mean.resize(out);
  quat.resize(out);
  log_scale.resize(out);
}

double activate_density(double raw) {
  // softplus, overflow-safe
  return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw)));
}

double activate_density_grad(double raw) {
  if (raw > 0.0) return 1.0 / (1.0 + std::exp(-raw));
  double e = std::exp(raw);
  return e / (1.0 + e);
}

double inverse_activate_density(double rho) {
  if (!(rho > 0.0)) throw NumericError("density must be positive to invert the activation");
  if (rho > 30.0) return rho;  // softplus is the identity to double precision here
  return std::log(std::expm1(rho));
}

Vec3 activated_sigma(const Vec3& log_scale, const ScaleClamp& clamp) {
  Vec3 sigma;
  for (int a = 0; a < 3; ++a) {
    sigma[a] = std::clamp(std::exp(log_scale[a]), clamp.min_sigma, clamp.max_sigma);
  }
  return sigma;
}

Mat3 quat_to_rotation(const Vec4& quat) {
  double norm = quat.norm();
  if (norm < 1e-12) throw NumericError("degenerate quaternion (norm < 1e-12)");
  double w = quat[0] / norm, x = quat[1] / norm, y = quat[2] / norm, z = quat[3] / norm;
  Mat3 rot;
  rot << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
         2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return rot;
}

Mat3 assemble_covariance(const Vec4& quat, const Vec3& log_scale, const ScaleClamp& clamp) {
  Mat3 rot = quat_to_rotation(quat);
  Vec3 sigma = activated_sigma(log_scale, clamp);
  return rot * sigma.array().square().matrix().asDiagonal() * rot.transpose();
}

namespace {

// dR/d(normalized quaternion component), rows stacked per component.
void rotation_quat_derivatives(double w, double x, double y, double z, Mat3 d[4]) {
  d[0] << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
  d[1] << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
  d[2] << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
  d[3] << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
  for (int k = 0; k < 4; ++k) d[k] *= 2.0;
}

}  // namespace

void assemble_covariance_backward(const Vec4& quat, const Vec3& log_scale, const ScaleClamp& clamp,
                                  const Mat3& dcov, Vec4& dquat, Vec3& dlog_scale) {
  double norm = quat.norm();
  if (norm < 1e-12) throw NumericError("degenerate quaternion (norm < 1e-12)");
  Vec4 n = quat / norm;
  Mat3 rot = quat_to_rotation(quat);
  Vec3 sigma = activated_sigma(log_scale, clamp);

  Mat3 grad = 0.5 * (dcov + dcov.transpose());

  // Scale path: Sigma = R A R^T, A = diag(sigma^2).
  Mat3 rtgr = rot.transpose() * grad * rot;
  for (int a = 0; a < 3; ++a) {
    double dsigma = 2.0 * sigma[a] * rtgr(a, a);
    double e = std::exp(log_scale[a]);
    bool inside = e > clamp.min_sigma && e < clamp.max_sigma;
    dlog_scale[a] = inside ? dsigma * e : 0.0;
  }

  // Rotation path: dL/dR = 2 G R A.
  Mat3 drot = 2.0 * grad * rot * sigma.array().square().matrix().asDiagonal();
  Mat3 dmats[4];
  rotation_quat_derivatives(n[0], n[1], n[2], n[3], dmats);
  Vec4 dn;
  for (int k = 0; k < 4; ++k) dn[k] = (drot.array() * dmats[k].array()).sum();

  // Through the normalization q -> q/|q|.
  dquat = (dn - n * n.dot(dn)) / norm;
}

namespace {

struct KernelEval {
  Vec3 mean;
  Mat3 inv;
  double rho;
  Vec3 cutoff;  // kCutoffSigmas * sqrt(diag(Sigma)) per axis
};

inline KernelEval make_kernel_eval(const Vec3& mean, const Mat3& cov, double rho) {
  KernelEval e;
  e.mean = mean;
  e.inv = cov.inverse();
  e.rho = rho;
  for (int a = 0; a < 3; ++a) e.cutoff[a] = kCutoffSigmas * std::sqrt(cov(a, a));
  return e;
}

// Shared inclusion predicate + evaluation; the rasterizer fast path and the
// brute-force field evaluator must agree bit for bit, so both go through
// this single function.
inline double kernel_contribution(const KernelEval& e, const Vec3& x) {
  Vec3 d = x - e.mean;
  if (std::abs(d.x()) > e.cutoff.x() || std::abs(d.y()) > e.cutoff.y() ||
      std::abs(d.z()) > e.cutoff.z()) {
    return 0.0;
  }
  return e.rho * std::exp(-0.5 * d.dot(e.inv * d));
}

}  // namespace

double field_value(const KernelView& kernels, const Vec3& x) {
  double value = 0.0;
  for (std::size_t n = 0; n < kernels.size(); ++n) {
    value += kernel_contribution(make_kernel_eval(kernels.mean[n], kernels.cov[n], kernels.rho[n]), x);
  }
  return value;
}

void activate_cloud(const GaussianCloud& cloud, std::vector<Vec3>& mean,
                    std::vector<Mat3>& cov, std::vector<double>& rho) {
  std::size_t n = cloud.size();
  mean.resize(n);
  cov.resize(n);
  rho.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    mean[i] = cloud.mean[i];
    cov[i] = assemble_covariance(cloud.quat[i], cloud.log_scale[i], cloud.clamp);
    rho[i] = activate_density(cloud.rho_raw[i]);
  }
}

double field_value(const GaussianCloud& cloud, const Vec3& x) {
  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> rho;
  activate_cloud(cloud, mean, cov, rho);
  return field_value(KernelView{mean, cov, rho}, x);
}

VoxelVolume rasterize_kernels_reference(const KernelView& kernels, const GridSpec& grid) {
  if (!grid.valid()) throw ValidationError("invalid voxel grid");
  VoxelVolume vol(grid);
  std::vector<KernelEval> evals(kernels.size());
  for (std::size_t n = 0; n < kernels.size(); ++n) {
    evals[n] = make_kernel_eval(kernels.mean[n], kernels.cov[n], kernels.rho[n]);
  }
  for (int k = 0; k < grid.dims.z(); ++k) {
    for (int j = 0; j < grid.dims.y(); ++j) {
      for (int i = 0; i < grid.dims.x(); ++i) {
        Vec3 x = grid.voxel_center(i, j, k);
        double acc = 0.0;
        for (const KernelEval& e : evals) acc += kernel_contribution(e, x);
        vol.at(i, j, k) = float(acc);
      }
    }
  }
  return vol;
}

VoxelVolume rasterize_kernels(const KernelView& kernels, const GridSpec& grid, bool parallel) {
  if (!grid.valid()) throw ValidationError("invalid voxel grid");
  VoxelVolume vol(grid);
  std::size_t n_kernels = kernels.size();
  if (n_kernels == 0) return vol;

  std::vector<KernelEval> evals(n_kernels);
  struct Window {
    int i0, i1, j0, j1, k0, k1;
  };
  std::vector<Window> windows(n_kernels);
  double inv_h = 1.0 / grid.spacing;

  // Search windows: one voxel of slack in every direction; the shared
  // predicate makes the actual inclusion decision.
  for (std::size_t n = 0; n < n_kernels; ++n) {
    evals[n] = make_kernel_eval(kernels.mean[n], kernels.cov[n], kernels.rho[n]);
    Vec3 lo = (evals[n].mean - evals[n].cutoff - grid.origin) * inv_h;
    Vec3 hi = (evals[n].mean + evals[n].cutoff - grid.origin) * inv_h;
    Window& w = windows[n];
    w.i0 = std::max(0, int(std::floor(lo.x())) - 1);
    w.j0 = std::max(0, int(std::floor(lo.y())) - 1);
    w.k0 = std::max(0, int(std::floor(lo.z())) - 1);
    w.i1 = std::min(grid.dims.x() - 1, int(std::ceil(hi.x())) + 1);
    w.j1 = std::min(grid.dims.y() - 1, int(std::ceil(hi.y())) + 1);
    w.k1 = std::min(grid.dims.z() - 1, int(std::ceil(hi.z())) + 1);
  }

  // Bin kernels per z-slice in ascending kernel order, so every voxel
  // accumulates contributions in the same order as the reference.
  std::vector<std::vector<std::uint32_t>> slice_kernels(grid.dims.z());
  for (std::size_t n = 0; n < n_kernels; ++n) {
    const Window& w = windows[n];
    if (w.i0 > w.i1 || w.j0 > w.j1 || w.k0 > w.k1) continue;
    for (int k = w.k0; k <= w.k1; ++k) slice_kernels[k].push_back(std::uint32_t(n));
  }

  std::vector<double> accum(grid.voxel_count(), 0.0);
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (int k = 0; k < grid.dims.z(); ++k) {
    for (std::uint32_t n : slice_kernels[k]) {
      const KernelEval& e = evals[n];
      const Window& w = windows[n];
      for (int j = w.j0; j <= w.j1; ++j) {
        std::size_t row = grid.index(0, j, k);
        for (int i = w.i0; i <= w.i1; ++i) {
          accum[row + i] += kernel_contribution(e, grid.voxel_center(i, j, k));
        }
      }
    }
  }
  for (std::size_t v = 0; v < accum.size(); ++v) vol.data[v] = float(accum[v]);
  return vol;
}

VoxelVolume rasterize_to_volume(const GaussianCloud& cloud, const GridSpec& grid, bool parallel) {
  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> rho;
  activate_cloud(cloud, mean, cov, rho);
  return rasterize_kernels(KernelView{mean, cov, rho}, grid, parallel);
}

namespace {

// Mean distance to the 3 nearest neighbors, via uniform-grid binning.
// Deterministic: candidate order is (cell scan order, point index).
std::vector<double> mean_neighbor_distances(const std::vector<Vec3>& points, double cell_size) {
  std::size_t n = points.size();
  std::vector<double> out(n, cell_size);
  if (n < 2) return out;

  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Vec3 span = (hi - lo).cwiseMax(1e-9);
  Vec3i dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max(1, std::min(256, int(span[a] / cell_size) + 1));
  }
  auto cell_of = [&](const Vec3& p) {
    Vec3i c;
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(int((p[a] - lo[a]) / span[a] * dims[a]), 0, dims[a] - 1);
    }
    return c;
  };
  std::vector<std::vector<std::uint32_t>> cells(std::size_t(dims.x()) * dims.y() * dims.z());
  auto cell_index = [&](const Vec3i& c) {
    return (std::size_t(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
  };
  for (std::size_t i = 0; i < n; ++i) cells[cell_index(cell_of(points[i]))].push_back(std::uint32_t(i));

#pragma omp parallel for schedule(dynamic, 256)
  for (long long ip = 0; ip < (long long)n; ++ip) {
    Vec3i c = cell_of(points[ip]);
    double best[3] = {1e300, 1e300, 1e300};
    int found = 0;
    for (int ring = 0; ring < std::max({dims.x(), dims.y(), dims.z()}); ++ring) {
      for (int dz = -ring; dz <= ring; ++dz) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            Vec3i cc = c + Vec3i(dx, dy, dz);
            if ((cc.array() < 0).any() || (cc.array() >= dims.array()).any()) continue;
            for (std::uint32_t q : cells[cell_index(cc)]) {
              if ((long long)q == ip) continue;
              double d2 = (points[q] - points[ip]).squaredNorm();
              if (d2 < best[2]) {
                best[2] = d2;
                if (best[2] < best[1]) std::swap(best[2], best[1]);
                if (best[1] < best[0]) std::swap(best[1], best[0]);
                if (found < 3) ++found;
              }
            }
          }
        }
      }
      // One extra ring after filling all three slots guarantees correctness
      // at cell boundaries.
      if (found >= 3 && ring >= 1) break;
    }
    double acc = 0.0;
    int cnt = 0;
    for (int k = 0; k < 3 && best[k] < 1e300; ++k) {
      acc += std::sqrt(best[k]);
      ++cnt;
    }
    out[ip] = cnt > 0 ? acc / cnt : cell_size;
  }
  return out;
}

}  // namespace

GaussianCloud sample_cloud_from_volume(const VoxelVolume& volume, std::size_t n_points,
                                       double threshold, std::uint64_t seed,
                                       const ScaleClamp& clamp) {
  if (n_points < 1) throw ValidationError("need at least one sample point");
  const GridSpec& grid = volume.grid;

  std::vector<double> cdf(volume.data.size() + 1, 0.0);
  for (std::size_t v = 0; v < volume.data.size(); ++v) {
    double w = volume.data[v] > threshold ? double(volume.data[v]) : 0.0;
    cdf[v + 1] = cdf[v] + w;
  }
  double total = cdf.back();
  if (!(total > 0.0)) throw ValidationError("no voxel above the sampling threshold");

  Pcg32 rng(seed, stream_id("init"));
  GaussianCloud cloud;
  cloud.clamp = clamp;
  cloud.reserve(n_points);
  std::vector<double> local_value(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    double u = rng.next_double() * total;
    std::size_t v = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin() - 1;
    v = std::min(v, volume.data.size() - 1);
    int i = int(v % grid.dims.x());
    int j = int((v / grid.dims.x()) % grid.dims.y());
    int k = int(v / (std::size_t(grid.dims.x()) * grid.dims.y()));
    Vec3 jitter(rng.next_double() - 0.5, rng.next_double() - 0.5, rng.next_double() - 0.5);
    Vec3 mu = grid.voxel_center(i, j, k) + grid.spacing * jitter;
    local_value[p] = double(volume.data[v]);
    cloud.push_back(0.0, mu, Vec4(1, 0, 0, 0), Vec3::Zero());
  }

  std::vector<double> nn = mean_neighbor_distances(cloud.mean, grid.spacing);
  for (std::size_t p = 0; p < n_points; ++p) {
    double sigma = std::clamp(nn[p], clamp.min_sigma, clamp.max_sigma);
    cloud.log_scale[p] = Vec3::Constant(std::log(sigma));
    cloud.rho_raw[p] = inverse_activate_density(std::max(local_value[p], 1e-12));
  }

  // Calibrate densities: rasterize once and match the mean value over the
  // support of the initializer volume.
  VoxelVolume test = rasterize_to_volume(cloud, grid, true);
  double num = 0.0, den = 0.0;
  std::size_t support = 0;
  for (std::size_t v = 0; v < volume.data.size(); ++v) {
    if (volume.data[v] > threshold) {
      num += double(volume.data[v]);
      den += double(test.data[v]);
      ++support;
    }
  }
  if (support > 0 && den > 0.0) {
    double gain = num / den;
    for (std::size_t p = 0; p < n_points; ++p) {
      cloud.rho_raw[p] = inverse_activate_density(std::max(local_value[p] * gain, 1e-12));
    }
  }
  return cloud;
}

}  // namespace cbgs
