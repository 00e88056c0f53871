#include "cbgs/splat_render.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cbgs {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double splat_value(const Splat2D& s, double px, double py) {
  Vec2 d(px - s.center.x(), py - s.center.y());
  return s.amplitude * std::exp(-0.5 * d.dot(s.cov_inv * d));
}

Splat2D project_with_jacobian(const ScanGeometry& geom, const ViewPose& pose, const Vec3& t_cam,
                              const Mat3& jac, const Mat3& cov, double rho,
                              const RenderOptions& opt) {
  Splat2D splat;
  Mat3 world_to_splat = jac * pose.rotation;
  Mat3 cov_splat = world_to_splat * cov * world_to_splat.transpose();

  double det3 = cov_splat.determinant();
  Mat2 m2 = cov_splat.topLeftCorner<2, 2>();
  double det2 = m2.determinant();
  if (!(det3 > 0.0) || !(det2 > 0.0)) return splat;  // degenerate, cull

  double f = geom.focal_px();
  splat.center = Vec2(f * t_cam.x() / t_cam.z() + geom.center_u(),
                      f * t_cam.y() / t_cam.z() + geom.center_v());
  splat.cov = m2 + Mat2::Identity() * opt.low_pass_px2;
  splat.cov_inv = splat.cov.inverse();
  splat.amplitude = rho * std::sqrt(kTwoPi * det3 / det2);
  splat.world_to_splat = world_to_splat;

  double ru = kCutoffSigmas * std::sqrt(splat.cov(0, 0));
  double rv = kCutoffSigmas * std::sqrt(splat.cov(1, 1));
  splat.x0 = std::max(0, int(std::ceil(splat.center.x() - ru)));
  splat.x1 = std::min(geom.detector_cols - 1, int(std::floor(splat.center.x() + ru)));
  splat.y0 = std::max(0, int(std::ceil(splat.center.y() - rv)));
  splat.y1 = std::min(geom.detector_rows - 1, int(std::floor(splat.center.y() + rv)));
  splat.live = splat.x0 <= splat.x1 && splat.y0 <= splat.y1;
  return splat;
}

}  // namespace

double integration_factor(const Mat3& cov_camera) {
  double lead = cov_camera(0, 0);
  Mat2 m2 = cov_camera.topLeftCorner<2, 2>();
  double det2 = m2.determinant();
  double det3 = cov_camera.determinant();
  if (!(lead > 0.0) || !(det2 > 0.0) || !(det3 > 0.0)) {
    throw NumericError("integration factor requires an SPD covariance");
  }
  return std::sqrt(kTwoPi * det3 / det2);
}

Splat2D project_gaussian(const ViewPose& pose, const ScanGeometry& geom, const Vec3& mean,
                         const Mat3& cov, double rho, const RenderOptions& opt) {
  Vec3 t_cam = pose.to_camera(mean);
  if (!(t_cam.z() > kDepthEpsilonMm)) return Splat2D{};
  Mat3 jac = perspective_jacobian(geom, t_cam);
  return project_with_jacobian(geom, pose, t_cam, jac, cov, rho, opt);
}

std::vector<Splat2D> project_snapshot(const KernelView& kernels, const ViewPose& pose,
                                      const ScanGeometry& geom, const RenderOptions& opt) {
  std::vector<Splat2D> splats(kernels.size());
#pragma omp parallel for schedule(static) if (opt.parallel)
  for (long long n = 0; n < (long long)kernels.size(); ++n) {
    splats[n] = project_gaussian(pose, geom, kernels.mean[n], kernels.cov[n], kernels.rho[n], opt);
  }
  return splats;
}

std::vector<Splat2D> project_snapshot_frozen(const KernelView& kernels, const ViewPose& pose,
                                             const ScanGeometry& geom,
                                             std::span<const Mat3> jacobians,
                                             const RenderOptions& opt) {
  std::vector<Splat2D> splats(kernels.size());
  for (std::size_t n = 0; n < kernels.size(); ++n) {
    Vec3 t_cam = pose.to_camera(kernels.mean[n]);
    if (!(t_cam.z() > kDepthEpsilonMm)) continue;
    splats[n] = project_with_jacobian(geom, pose, t_cam, jacobians[n], kernels.cov[n],
                                      kernels.rho[n], opt);
  }
  return splats;
}

std::vector<Mat3> snapshot_jacobians(const KernelView& kernels, const ViewPose& pose,
                                     const ScanGeometry& geom) {
  std::vector<Mat3> jacs(kernels.size(), Mat3::Identity());
  for (std::size_t n = 0; n < kernels.size(); ++n) {
    Vec3 t_cam = pose.to_camera(kernels.mean[n]);
    if (t_cam.z() > kDepthEpsilonMm) jacs[n] = perspective_jacobian(geom, t_cam);
  }
  return jacs;
}

ImageBuffer composite_reference(std::span<const Splat2D> splats, int rows, int cols) {
  ImageBuffer img(rows, cols);
  for (int py = 0; py < rows; ++py) {
    for (int px = 0; px < cols; ++px) {
      double acc = 0.0;
      for (const Splat2D& s : splats) {
        if (s.empty()) continue;
        if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) continue;
        acc += splat_value(s, double(px), double(py));
      }
      img.at(py, px) = acc;
    }
  }
  return img;
}

ImageBuffer composite(std::span<const Splat2D> splats, int rows, int cols,
                      const RenderOptions& opt) {
  ImageBuffer img(rows, cols);
  int ts = std::max(1, opt.tile_size);
  int tiles_x = (cols + ts - 1) / ts;
  int tiles_y = (rows + ts - 1) / ts;

  // Bin in ascending splat order so each pixel sums in reference order.
  std::vector<std::vector<std::uint32_t>> tile_splats(std::size_t(tiles_x) * tiles_y);
  for (std::size_t n = 0; n < splats.size(); ++n) {
    const Splat2D& s = splats[n];
    if (s.empty()) continue;
    int tx0 = s.x0 / ts, tx1 = s.x1 / ts;
    int ty0 = s.y0 / ts, ty1 = s.y1 / ts;
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) {
        tile_splats[std::size_t(ty) * tiles_x + tx].push_back(std::uint32_t(n));
      }
    }
  }

#pragma omp parallel for schedule(dynamic, 2) if (opt.parallel)
  for (long long tile = 0; tile < (long long)tile_splats.size(); ++tile) {
    const auto& list = tile_splats[tile];
    if (list.empty()) continue;
    int tx = int(tile % tiles_x), ty = int(tile / tiles_x);
    int px0 = tx * ts, px1 = std::min(cols - 1, px0 + ts - 1);
    int py0 = ty * ts, py1 = std::min(rows - 1, py0 + ts - 1);
    for (std::uint32_t n : list) {
      const Splat2D& s = splats[n];
      int x0 = std::max(px0, s.x0), x1 = std::min(px1, s.x1);
      int y0 = std::max(py0, s.y0), y1 = std::min(py1, s.y1);
      for (int py = y0; py <= y1; ++py) {
        double* row = &img.at(py, 0);
        for (int px = x0; px <= x1; ++px) {
          row[px] += splat_value(s, double(px), double(py));
        }
      }
    }
  }
  return img;
}

ImageBuffer render_buffer(const KernelView& kernels, const ViewPose& pose,
                          const ScanGeometry& geom, const RenderOptions& opt) {
  std::vector<Splat2D> splats = project_snapshot(kernels, pose, geom, opt);
  return composite(splats, geom.detector_rows, geom.detector_cols, opt);
}

DetectorImage render(const KernelView& kernels, const ViewPose& pose, const ScanGeometry& geom,
                     const RenderOptions& opt) {
  return render_buffer(kernels, pose, geom, opt).to_image();
}

RenderGrads render_backward(const KernelView& kernels, std::span<const Splat2D> splats,
                            const ImageBuffer& upstream, const RenderOptions& opt) {
  std::size_t n_kernels = kernels.size();
  RenderGrads grads;
  grads.rho.assign(n_kernels, 0.0);
  grads.mean.assign(n_kernels, Vec3::Zero());
  grads.cov.assign(n_kernels, Mat3::Zero());
  grads.center_grad_norm.assign(n_kernels, 0.0);

  // Each kernel owns exactly one splat, so the loop is race-free and the
  // per-kernel pixel sums run in a fixed order for any thread count.
#pragma omp parallel for schedule(dynamic, 16) if (opt.parallel)
  for (long long n = 0; n < (long long)n_kernels; ++n) {
    const Splat2D& s = splats[n];
    if (s.empty()) continue;

    double d_amp = 0.0;
    Vec2 d_center = Vec2::Zero();
    Mat2 d_cov2 = Mat2::Zero();
    for (int py = s.y0; py <= s.y1; ++py) {
      const double* grow = upstream.data.data() + std::size_t(py) * upstream.cols;
      for (int px = s.x0; px <= s.x1; ++px) {
        double g = grow[px];
        if (g == 0.0) continue;
        Vec2 d(double(px) - s.center.x(), double(py) - s.center.y());
        Vec2 id = s.cov_inv * d;
        double e = std::exp(-0.5 * d.dot(id));
        d_amp += g * e;
        double w = g * e * s.amplitude;
        d_center += w * id;
        d_cov2 += (0.5 * w) * (id * id.transpose());
      }
    }
    grads.center_grad_norm[n] = d_center.norm();

    const Mat3& world_to_splat = s.world_to_splat;
    Mat3 cov_splat = world_to_splat * kernels.cov[n] * world_to_splat.transpose();
    Mat2 m2 = cov_splat.topLeftCorner<2, 2>();
    double det3 = cov_splat.determinant();
    double det2 = m2.determinant();
    if (!(det3 > 0.0) || !(det2 > 0.0)) continue;
    double factor = std::sqrt(kTwoPi * det3 / det2);

    // Amplitude chain: d factor / d cov_splat = factor/2 (S3^-1 - embed(S2^-1)).
    Mat3 d_cov_splat = Mat3::Zero();
    double w_amp = kernels.rho[n] * d_amp * 0.5 * factor;
    Mat3 inv3 = cov_splat.inverse();
    Mat2 inv2 = m2.inverse();
    d_cov_splat = w_amp * inv3;
    d_cov_splat.topLeftCorner<2, 2>() -= w_amp * inv2;

    // Footprint chain: the low-pass floor is additive.
    d_cov_splat.topLeftCorner<2, 2>() += d_cov2;

    grads.rho[n] = factor * d_amp;
    grads.cov[n] = world_to_splat.transpose() * d_cov_splat * world_to_splat;
    grads.mean[n] = world_to_splat.topRows<2>().transpose() * d_center;
  }
  return grads;
}

}  // namespace cbgs
