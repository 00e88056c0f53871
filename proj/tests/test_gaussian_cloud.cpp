#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/rng.hpp"

using namespace cbgs;

namespace {
const ScaleClamp kWide{1e-6, 1e6};
}

TEST_CASE("covariance assembly") {
  CHECK((assemble_covariance(Vec4(1, 0, 0, 0), Vec3::Zero(), kWide) - Mat3::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  // 90 degrees about z with sigma (1,2,3) swaps the x/y variances.
  double c = std::cos(std::numbers::pi / 4.0), s = std::sin(std::numbers::pi / 4.0);
  Mat3 rotated = assemble_covariance(Vec4(c, 0, 0, s),
                                     Vec3(std::log(1.0), std::log(2.0), std::log(3.0)), kWide);
  Mat3 expected = Vec3(4.0, 1.0, 9.0).asDiagonal();
  CHECK((rotated - expected).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(assemble_covariance(Vec4::Zero(), Vec3::Zero(), kWide), NumericError);
}

TEST_CASE("covariance eigenvalues equal activated variances") {
  Pcg32 rng(3, stream_id("test_cov"));
  for (int trial = 0; trial < 50; ++trial) {
    Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    if (q.norm() < 0.1) q = Vec4(1, 0, 0, 0);
    Vec3 s(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    Mat3 cov = assemble_covariance(q, s, kWide);

    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 want = (2.0 * s).array().exp();
    std::sort(want.data(), want.data() + 3);
    for (int a = 0; a < 3; ++a) {
      CHECK(eig.eigenvalues()[a] == doctest::Approx(want[a]).epsilon(1e-10));
      CHECK(eig.eigenvalues()[a] > 0.0);
    }
  }
}

TEST_CASE("scale clamping bounds activated sigmas") {
  ScaleClamp clamp{0.5, 2.0};
  Vec3 sigma = activated_sigma(Vec3(-10.0, 0.0, 10.0), clamp);
  CHECK(sigma.x() == 0.5);
  CHECK(sigma.y() == 1.0);
  CHECK(sigma.z() == 2.0);
}

TEST_CASE("density activation is positive with exact inverse") {
  Pcg32 rng(9, stream_id("test_act"));
  for (int trial = 0; trial < 100; ++trial) {
    double raw = rng.uniform(-20.0, 20.0);
    CHECK(activate_density(raw) > 0.0);
    double rho = activate_density(raw);
    CHECK(activate_density(inverse_activate_density(rho)) == doctest::Approx(rho).epsilon(1e-12));
    double h = 1e-6;
    double fd = (activate_density(raw + h) - activate_density(raw - h)) / (2 * h);
    CHECK(activate_density_grad(raw) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("field evaluation") {
  GaussianCloud empty;
  CHECK(field_value(empty, Vec3(1, 2, 3)) == 0.0);

  GaussianCloud one;
  one.clamp = kWide;
  one.push_back(inverse_activate_density(0.02), Vec3(5, -3, 2), Vec4(1, 0, 0, 0),
                Vec3::Constant(std::log(4.0)));
  CHECK(field_value(one, Vec3(5, -3, 2)) == doctest::Approx(0.02).epsilon(1e-12));

  GaussianCloud two = one;
  two.push_back(one.rho_raw[0], one.mean[0], one.quat[0], one.log_scale[0]);
  CHECK(field_value(two, Vec3(6, -3, 1)) ==
        doctest::Approx(2.0 * field_value(one, Vec3(6, -3, 1))).epsilon(1e-14));

  // Reordering kernels does not change the field.
  GaussianCloud a, b;
  a.clamp = b.clamp = kWide;
  Pcg32 rng(13, stream_id("test_field"));
  std::vector<std::array<double, 8>> params;
  for (int n = 0; n < 6; ++n) {
    params.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10),
                      rng.uniform(0.5, 1.5), rng.next_normal(), rng.next_normal(),
                      rng.next_normal(), rng.next_normal()});
  }
  auto add = [&](GaussianCloud& cloud, const std::array<double, 8>& p) {
    cloud.push_back(0.3, Vec3(p[0], p[1], p[2]), Vec4(p[4], p[5], p[6], p[7]),
                    Vec3::Constant(p[3]));
  };
  for (const auto& p : params) add(a, p);
  for (auto it = params.rbegin(); it != params.rend(); ++it) add(b, *it);
  Vec3 x(2.0, -1.0, 3.0);
  CHECK(field_value(a, x) == doctest::Approx(field_value(b, x)).epsilon(1e-13));
}

TEST_CASE("rasterization agrees with the brute-force oracle bit for bit") {
  Pcg32 rng(21, stream_id("test_raster"));
  GaussianCloud cloud;
  cloud.clamp = kWide;
  for (int n = 0; n < 30; ++n) {
    Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    cloud.push_back(rng.uniform(-2.0, 0.5),
                    Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30)),
                    q.norm() < 0.1 ? Vec4(1, 0, 0, 0) : q,
                    Vec3(rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)));
  }
  GridSpec grid = GridSpec::centered(24, 3.0);
  VoxelVolume fast_serial = rasterize_to_volume(cloud, grid, false);
  VoxelVolume fast_parallel = rasterize_to_volume(cloud, grid, true);

  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> rho;
  activate_cloud(cloud, mean, cov, rho);
  VoxelVolume brute = rasterize_kernels_reference(KernelView{mean, cov, rho}, grid);

  CHECK(fast_serial.data == brute.data);
  CHECK(fast_parallel.data == brute.data);
}

TEST_CASE("rasterized kernel mass matches the Gaussian normalization") {
  // Isotropic kernel with sigma = 4 voxels centered on a voxel: the voxel sum
  // approximates rho (2 pi)^{3/2} sigma^3 / h^3 (the cutoff box keeps 99.2%
  // of the mass and the midpoint rule is exact to double precision here).
  double h = 2.0;
  double sigma = 4.0 * h;
  double rho = 0.035;
  GridSpec grid = GridSpec::centered(64, h);

  GaussianCloud cloud;
  cloud.clamp = kWide;
  Vec3 center = grid.voxel_center(32, 32, 32);
  cloud.push_back(inverse_activate_density(rho), center, Vec4(1, 0, 0, 0),
                  Vec3::Constant(std::log(sigma)));
  VoxelVolume vol = rasterize_to_volume(cloud, grid);
  double sum = 0.0;
  for (float v : vol.data) sum += v;

  double expect = rho * std::pow(2.0 * std::numbers::pi, 1.5) * std::pow(sigma, 3) / (h * h * h);
  CHECK(sum == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("rasterization is linear in density") {
  GridSpec grid = GridSpec::centered(16, 2.0);
  std::vector<Vec3> mean = {Vec3(1, 2, 3), Vec3(-4, 0, 2)};
  std::vector<Mat3> cov = {Mat3::Identity() * 16.0, Mat3::Identity() * 9.0};
  std::vector<double> rho = {0.01, 0.02};
  std::vector<double> rho2 = {0.02, 0.04};
  VoxelVolume a = rasterize_kernels(KernelView{mean, cov, rho}, grid);
  VoxelVolume b = rasterize_kernels(KernelView{mean, cov, rho2}, grid);
  for (std::size_t v = 0; v < a.data.size(); ++v) {
    CHECK(double(b.data[v]) == doctest::Approx(2.0 * double(a.data[v])).epsilon(1e-12));
  }
}

TEST_CASE("cloud sampling from a volume") {
  GridSpec grid = GridSpec::centered(8, 1.0);
  VoxelVolume zero(grid);
  CHECK_THROWS_AS(sample_cloud_from_volume(zero, 10, 0.0, 1, kWide), ValidationError);

  VoxelVolume hot(grid);
  hot.at(3, 4, 5) = 1.0f;
  GaussianCloud cloud = sample_cloud_from_volume(hot, 10, 0.5, 1, kWide);
  REQUIRE(cloud.size() == 10);
  Vec3 cell = grid.voxel_center(3, 4, 5);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK((cloud.mean[n] - cell).cwiseAbs().maxCoeff() <= 0.5 * grid.spacing);
    CHECK(activate_density(cloud.rho_raw[n]) > 0.0);
  }

  // Determinism.
  GaussianCloud again = sample_cloud_from_volume(hot, 10, 0.5, 1, kWide);
  CHECK(cloud.rho_raw == again.rho_raw);
  REQUIRE(cloud.mean.size() == again.mean.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(cloud.mean[n] == again.mean[n]);
    CHECK(cloud.log_scale[n] == again.log_scale[n]);
  }

  GaussianCloud other = sample_cloud_from_volume(hot, 10, 0.5, 2, kWide);
  bool any_diff = false;
  for (std::size_t n = 0; n < cloud.size(); ++n) any_diff |= cloud.mean[n] != other.mean[n];
  CHECK(any_diff);
}

TEST_CASE("sampled cloud reproduces the volume mean over its support") {
  Pcg32 rng(31, stream_id("test_init"));
  GridSpec grid = GridSpec::centered(24, 2.0);
  VoxelVolume vol(grid);
  // A smooth bump.
  for (int k = 0; k < 24; ++k)
    for (int j = 0; j < 24; ++j)
      for (int i = 0; i < 24; ++i) {
        double r2 = grid.voxel_center(i, j, k).squaredNorm();
        vol.at(i, j, k) = float(0.02 * std::exp(-r2 / (2 * 12.0 * 12.0)));
      }
  double threshold = 0.002;
  GaussianCloud cloud = sample_cloud_from_volume(vol, 600, threshold, 7, kWide);
  VoxelVolume recon = rasterize_to_volume(cloud, grid);
  double in = 0, out = 0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < vol.data.size(); ++v) {
    if (vol.data[v] > threshold) {
      in += vol.data[v];
      out += recon.data[v];
      ++count;
    }
  }
  REQUIRE(count > 0);
  CHECK(out / count == doctest::Approx(in / count).epsilon(1e-6));
}
