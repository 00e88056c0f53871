#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace cbgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
// Unaligned so std::vector<Vec4> can be reinterpreted as a flat double span.
using Vec4 = Eigen::Matrix<double, 4, 1, Eigen::DontAlign>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec3i = Eigen::Vector3i;

/// Kernel cutoff radius in standard deviations. Evaluation is restricted to
/// the axis-aligned box |x_i - mu_i| <= kCutoffSigmas * sqrt(Sigma_ii), the
/// exact axis-aligned extent of the cutoff ellipsoid. Used identically by the
/// field evaluator, the voxel rasterizer and the detector splatter so that
/// reference and fast paths agree bit for bit.
inline constexpr double kCutoffSigmas = 3.0;

/// Non-owning view of a set of Gaussian kernels in world space with already
/// activated densities and assembled covariances. Both the optimizable cloud
/// (after warping) and analytic phantoms reduce to this.
struct KernelView {
  std::span<const Vec3> mean;
  std::span<const Mat3> cov;
  std::span<const double> rho;

  std::size_t size() const { return mean.size(); }
};

/// Detector image: line integrals in mm^-1*mm, 32-bit storage.
struct DetectorImage {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  DetectorImage() = default;
  DetectorImage(int r, int c) : rows(r), cols(c), data(std::size_t(r) * c, 0.0f) {}

  float& at(int row, int col) { return data[std::size_t(row) * cols + col]; }
  float at(int row, int col) const { return data[std::size_t(row) * cols + col]; }
  std::size_t pixel_count() const { return data.size(); }
};

/// Double-precision image buffer used for accumulation, gradients and
/// high-accuracy oracles.
struct ImageBuffer {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  ImageBuffer() = default;
  ImageBuffer(int r, int c) : rows(r), cols(c), data(std::size_t(r) * c, 0.0) {}

  double& at(int row, int col) { return data[std::size_t(row) * cols + col]; }
  double at(int row, int col) const { return data[std::size_t(row) * cols + col]; }

  DetectorImage to_image() const {
    DetectorImage img(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) img.data[i] = float(data[i]);
    return img;
  }
};

inline ImageBuffer to_buffer(const DetectorImage& img) {
  ImageBuffer buf(img.rows, img.cols);
  for (std::size_t i = 0; i < img.data.size(); ++i) buf.data[i] = img.data[i];
  return buf;
}

}  // namespace cbgs
