#include <doctest.h>

#include <cmath>

#include "cbgs/gradcheck.hpp"
#include "cbgs/rng.hpp"
#include "cbgs/warp.hpp"

using namespace cbgs;

namespace {

const ScaleClamp kWide{1e-6, 1e6};

GaussianCloud random_cloud(int n, std::uint64_t seed, double extent = 30.0) {
  GaussianCloud cloud;
  cloud.clamp = kWide;
  Pcg32 rng(seed, stream_id("test_warp_cloud"));
  for (int i = 0; i < n; ++i) {
    Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    cloud.push_back(rng.uniform(-1.0, 1.0),
                    Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                         rng.uniform(-extent, extent)),
                    q.norm() < 0.1 ? Vec4(1, 0, 0, 0) : q,
                    Vec3(rng.uniform(0.3, 1.4), rng.uniform(0.3, 1.4), rng.uniform(0.3, 1.4)));
  }
  return cloud;
}

SpatialLattice affine_lattice(const Mat3& linear, double extent, double spacing, int ranks,
                              bool channels) {
  SpatialLattice lat = SpatialLattice::cover(Vec3::Constant(-extent), Vec3::Constant(extent),
                                             Vec3::Constant(spacing), ranks, channels);
  for (int k = 0; k < lat.dims.z(); ++k)
    for (int j = 0; j < lat.dims.y(); ++j)
      for (int i = 0; i < lat.dims.x(); ++i) {
        Vec3 pos = lat.origin + lat.spacing.cwiseProduct(Vec3(i, j, k));
        Vec3 d = linear * pos;
        std::size_t off = lat.disp_offset(0, lat.node_index(i, j, k));
        lat.disp[off] = d.x();
        lat.disp[off + 1] = d.y();
        lat.disp[off + 2] = d.z();
      }
  return lat;
}

FFDMotionModel affine_model(const Mat3& linear, int ranks = 1, bool channels = false) {
  FFDMotionModel model;
  model.lattice = affine_lattice(linear, 40.0, 16.0, ranks, channels);
  model.temporal = TemporalSpline::make(ranks, 0.0, 19.0, 4.0);
  for (int j = 0; j < model.temporal.n_ctrl; ++j) model.temporal.at(0, j) = 1.0;
  return model;
}

}  // namespace

TEST_CASE("zero motion model leaves the cloud untouched") {
  GaussianCloud cloud = random_cloud(15, 1);
  FFDMotionModel model;
  model.lattice = SpatialLattice::cover(Vec3::Constant(-40), Vec3::Constant(40),
                                        Vec3::Constant(16.0), 2, false);
  model.temporal = TemporalSpline::make(2, 0.0, 19.0, 4.0);

  CloudSnapshot snap = warp_di(cloud, model, 11.0, false);
  CloudSnapshot ref = static_snapshot(cloud);
  REQUIRE(snap.size() == cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(snap.mean[n] == ref.mean[n]);
    CHECK(snap.cov[n] == ref.cov[n]);
    CHECK(snap.rho[n] == ref.rho[n]);  // bit-identical densities
  }
  CHECK(snap.fold_incidents == 0);
}

TEST_CASE("DI warp under a rigid rotation lattice") {
  Mat3 rot = Eigen::AngleAxisd(0.35, Vec3(0.3, -0.4, 0.85).normalized()).toRotationMatrix();
  FFDMotionModel model = affine_model(rot - Mat3::Identity());
  GaussianCloud cloud = random_cloud(20, 2);

  CloudSnapshot snap = warp_di(cloud, model, 9.0, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    Mat3 cov0 = assemble_covariance(cloud.quat[n], cloud.log_scale[n], cloud.clamp);
    // Means follow the affine map (linear precision).
    CHECK((snap.mean[n] - rot * cloud.mean[n]).cwiseAbs().maxCoeff() < 1e-10);
    // Covariances transform by congruence with the rotation.
    CHECK((snap.cov[n] - rot * cov0 * rot.transpose()).cwiseAbs().maxCoeff() <
          1e-8 * cov0.norm());
    // Determinant preserved.
    CHECK(snap.cov[n].determinant() ==
          doctest::Approx(cov0.determinant()).epsilon(1e-8));
    // Symmetry.
    CHECK((snap.cov[n] - snap.cov[n].transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("DI warp under isotropic scaling changes determinants by the sixth power") {
  FFDMotionModel model = affine_model(0.2 * Mat3::Identity());  // x -> 1.2 x
  GaussianCloud cloud = random_cloud(10, 3);
  CloudSnapshot snap = warp_di(cloud, model, 5.0, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    Mat3 cov0 = assemble_covariance(cloud.quat[n], cloud.log_scale[n], cloud.clamp);
    double ratio = snap.cov[n].determinant() / cov0.determinant();
    CHECK(ratio == doctest::Approx(std::pow(1.2, 6)).epsilon(1e-6));
  }
}

TEST_CASE("near-singular jacobians get floored and flagged") {
  // A contraction x -> x - 0.999 x collapses K to 0.001 I.
  FFDMotionModel model = affine_model(-0.999 * Mat3::Identity());
  GaussianCloud cloud = random_cloud(5, 4, 20.0);
  CloudSnapshot snap = warp_di(cloud, model, 5.0, false);
  CHECK(snap.fold_incidents == 5);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    // Still SPD thanks to the singular-value floor.
    Eigen::SelfAdjointEigenSolver<Mat3> eig(snap.cov[n]);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("decoupled mode separates position and shape channels") {
  Mat3 linear;
  linear << 0.05, 0.01, 0.0, -0.02, 0.04, 0.01, 0.0, 0.02, 0.06;
  GaussianCloud cloud = random_cloud(12, 5);

  // Zero extra channels: covariances stay put under nonzero position motion.
  FFDMotionModel moving = affine_model(linear, 1, true);
  CloudSnapshot snap = warp_decoupled(cloud, moving, 9.0, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    Mat3 cov0 = assemble_covariance(cloud.quat[n], cloud.log_scale[n], cloud.clamp);
    CHECK((snap.mean[n] - (cloud.mean[n] + linear * cloud.mean[n])).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((snap.cov[n] - cov0).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Zero position, nonzero scale channel: means stay, covariances move.
  FFDMotionModel shaping;
  shaping.lattice = SpatialLattice::cover(Vec3::Constant(-40), Vec3::Constant(40),
                                          Vec3::Constant(16.0), 1, true);
  shaping.temporal = TemporalSpline::make(1, 0.0, 19.0, 4.0);
  for (int j = 0; j < shaping.temporal.n_ctrl; ++j) shaping.temporal.at(0, j) = 1.0;
  Vec3 ds(0.2, -0.1, 0.3);
  for (std::size_t n = 0; n < shaping.lattice.nodes(); ++n) {
    std::size_t off = shaping.lattice.scale_offset(0, n);
    shaping.lattice.scale_delta[off] = ds.x();
    shaping.lattice.scale_delta[off + 1] = ds.y();
    shaping.lattice.scale_delta[off + 2] = ds.z();
  }
  CloudSnapshot shaped = warp_decoupled(cloud, shaping, 9.0, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(shaped.mean[n] == cloud.mean[n]);
    // Constant scale channel with omega = 1 multiplies sigmas by exp(ds).
    Vec3 sigma0 = activated_sigma(cloud.log_scale[n], cloud.clamp);
    Vec3 sigma1 = activated_sigma(shaped.log_scale_t[n], cloud.clamp);
    for (int a = 0; a < 3; ++a) {
      CHECK(sigma1[a] / sigma0[a] == doctest::Approx(std::exp(ds[a])).epsilon(1e-12));
    }
    Mat3 cov0 = assemble_covariance(cloud.quat[n], cloud.log_scale[n], cloud.clamp);
    CHECK((shaped.cov[n] - cov0).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("per-gaussian mode") {
  GaussianCloud cloud = random_cloud(10, 6);
  TemporalSpline temporal = TemporalSpline::make(2, 0.0, 19.0, 4.0);
  Pcg32 rng(77, stream_id("test_pg"));
  for (double& c : temporal.ctrl) c = rng.uniform(-0.6, 0.6);

  // All-zero weights: identity snapshot.
  PerGaussianWeights zeros = PerGaussianWeights::zeros(cloud.size(), 2);
  CloudSnapshot still = warp_per_gaussian(cloud, temporal, zeros, 7.0, false);
  CloudSnapshot ref = static_snapshot(cloud);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(still.mean[n] == ref.mean[n]);
    CHECK(still.cov[n] == ref.cov[n]);
    CHECK(still.rho[n] == ref.rho[n]);
  }

  // Kernels sharing weights move identically.
  PerGaussianWeights shared = PerGaussianWeights::zeros(cloud.size(), 2);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    double* wk = shared.kernel_data(n);
    wk[0] = 3.0;
    wk[1] = -1.0;
    wk[2] = 0.5;  // rank-0 position weight
  }
  CloudSnapshot moved = warp_per_gaussian(cloud, temporal, shared, 7.0, false);
  Vec3 delta0 = moved.mean[0] - cloud.mean[0];
  for (std::size_t n = 1; n < cloud.size(); ++n) {
    CHECK((moved.mean[n] - cloud.mean[n] - delta0).cwiseAbs().maxCoeff() < 1e-14);
  }

  // Missing weights are a configuration error.
  PerGaussianWeights wrong = PerGaussianWeights::zeros(cloud.size() - 1, 2);
  CHECK_THROWS_AS(warp_per_gaussian(cloud, temporal, wrong, 7.0, false), ValidationError);
}

TEST_CASE("per-gaussian weights copied from the lattice reproduce decoupled mode") {
  GaussianCloud cloud = random_cloud(15, 7);
  Pcg32 rng(88, stream_id("test_equiv"));
  FFDMotionModel model;
  model.lattice = SpatialLattice::cover(Vec3::Constant(-40), Vec3::Constant(40),
                                        Vec3::Constant(16.0), 2, true);
  model.temporal = TemporalSpline::make(2, 0.0, 19.0, 4.0);
  for (double& d : model.lattice.disp) d = rng.uniform(-2, 2);
  for (double& d : model.lattice.scale_delta) d = rng.uniform(-0.15, 0.15);
  for (double& d : model.lattice.quat_delta) d = rng.uniform(-0.15, 0.15);
  for (double& c : model.temporal.ctrl) c = rng.uniform(-1, 1);

  PerGaussianWeights weights = weights_from_lattice(cloud, model);
  for (double t : {0.0, 6.3, 15.8}) {
    CloudSnapshot dec = warp_decoupled(cloud, model, t, false);
    CloudSnapshot pg = warp_per_gaussian(cloud, model.temporal, weights, t, false);
    for (std::size_t n = 0; n < cloud.size(); ++n) {
      CHECK((dec.mean[n] - pg.mean[n]).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((dec.cov[n] - pg.cov[n]).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(dec.rho[n] == pg.rho[n]);
    }
  }
}

TEST_CASE("warp backward basics") {
  GaussianCloud cloud = random_cloud(8, 8);
  MotionState motion;
  motion.mode = MotionMode::kDi;
  motion.model.lattice = SpatialLattice::cover(Vec3::Constant(-40), Vec3::Constant(40),
                                               Vec3::Constant(16.0), 2, false);
  motion.model.temporal = TemporalSpline::make(2, 0.0, 19.0, 4.0);
  CloudSnapshot snap = warp(cloud, motion, 4.0, false);

  std::vector<Vec3> zero_mean(cloud.size(), Vec3::Zero());
  std::vector<Mat3> zero_cov(cloud.size(), Mat3::Zero());
  std::vector<double> zero_rho(cloud.size(), 0.0);
  WarpGrads none = warp_backward(cloud, motion, snap, zero_mean, zero_cov, zero_rho, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(none.cloud.rho_raw[n] == 0.0);
    CHECK(none.cloud.mean[n].norm() == 0.0);
    CHECK(none.cloud.quat[n].norm() == 0.0);
    CHECK(none.cloud.log_scale[n].norm() == 0.0);
  }
  for (double g : none.motion.disp) CHECK(g == 0.0);

  // Identity motion: the mean gradient passes through unchanged.
  std::vector<Vec3> d_mean(cloud.size());
  Pcg32 rng(99, stream_id("test_wb"));
  for (auto& g : d_mean) g = Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
  WarpGrads grads = warp_backward(cloud, motion, snap, d_mean, zero_cov, zero_rho, false);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(grads.cloud.mean[n] == d_mean[n]);
  }

  // Stale cache rejected.
  GaussianCloud bigger = random_cloud(9, 9);
  CHECK_THROWS_AS(
      warp_backward(bigger, motion, snap, zero_mean, zero_cov, zero_rho, false),
      ValidationError);
}

TEST_CASE("full-chain warp gradients match finite differences in all modes") {
  for (MotionMode mode :
       {MotionMode::kDi, MotionMode::kDecoupledFfd, MotionMode::kPerGaussian}) {
    GradCheckResult result = check_warp_gradients(mode, 515);
    for (const auto& [group, err] : result.max_rel_error) {
      INFO(motion_mode_name(mode) << " / " << group);
      CHECK(err <= 1e-4);
    }
  }
}
