#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cbgs/geometry.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/rng.hpp"

using namespace cbgs;

namespace {
const DetectorSpec kPaperDetector{512, 512, 0.8};
}

TEST_CASE("circular geometry construction and validation") {
  ScanGeometry geom = make_circular_geometry(1000, 1536, 310, kPaperDetector, 116.0);
  CHECK(geom.n_views == 310);
  CHECK(geom.angles.front() == 0.0);
  for (int i = 0; i < geom.n_views; ++i) {
    CHECK(geom.angles[i] == doctest::Approx(2.0 * std::numbers::pi * i / 310.0).epsilon(1e-15));
  }
  for (int i = 1; i < geom.n_views; ++i) CHECK(geom.angles[i] > geom.angles[i - 1]);
  CHECK(geom.angles.back() < 2.0 * std::numbers::pi);

  CHECK_NOTHROW(make_circular_geometry(1000, 1536, 1, kPaperDetector, 0.0));
  CHECK_THROWS_AS(make_circular_geometry(1000, 1000, 10, kPaperDetector, 0.0), ValidationError);
  CHECK_THROWS_AS(make_circular_geometry(-5, 1536, 10, kPaperDetector, 0.0), ValidationError);
  CHECK_THROWS_AS(make_circular_geometry(1000, 1536, 0, kPaperDetector, 0.0), ValidationError);
  CHECK_THROWS_AS(
      make_circular_geometry(1000, 1536, 10, DetectorSpec{512, 512, -1.0}, 0.0), ValidationError);
}

TEST_CASE("single-view geometry is the degenerate case") {
  ScanGeometry geom = make_circular_geometry(1000, 1536, 1, kPaperDetector, 0.0);
  ViewPose pose = view_pose(geom, 0);
  CHECK(pose.angle == 0.0);
  CHECK_THROWS_AS(view_pose(geom, 1), ValidationError);
  CHECK_THROWS_AS(view_pose(geom, -1), ValidationError);
}

TEST_CASE("view poses follow the world convention") {
  ScanGeometry geom = make_circular_geometry(1000, 1536, 310, kPaperDetector, 116.0);
  ViewPose pose0 = view_pose(geom, 0);

  CHECK((pose0.source_world() - Vec3(-1000, 0, 0)).norm() < 1e-9);
  CHECK((pose0.to_camera(Vec3::Zero()) - Vec3(0, 0, 1000)).norm() < 1e-10);

  // Rotation block orthonormal.
  Mat3 gram = pose0.rotation.transpose() * pose0.rotation;
  CHECK((gram - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  // Applying the transform to the source yields the camera origin.
  CHECK(pose0.to_camera(pose0.source_world()).norm() < 1e-9);

  // Half-turn symmetry of an even-count scan.
  ScanGeometry even = make_circular_geometry(1000, 1536, 8, kPaperDetector, 0.0);
  Vec3 s0 = view_pose(even, 0).source_world();
  Vec3 s4 = view_pose(even, 4).source_world();
  CHECK((s0.head<2>() + s4.head<2>()).norm() < 1e-9);
}

TEST_CASE("pinhole projection conventions") {
  ScanGeometry geom = full_scan_geometry();
  ViewPose pose = view_pose(geom, 7);

  PixelCoord center = project_point(pose, geom, Vec3::Zero());
  CHECK(center.u == doctest::Approx(geom.center_u()).epsilon(1e-12));
  CHECK(center.v == doctest::Approx(geom.center_v()).epsilon(1e-12));
  CHECK(center.depth == doctest::Approx(geom.sid).epsilon(1e-12));

  // Lateral displacement at isocenter depth magnified by sdd/sid = 1.536.
  double delta = 7.0;
  Vec3 lateral = pose.to_world(Vec3(delta, 0, geom.sid));
  PixelCoord moved = project_point(pose, geom, lateral);
  CHECK(moved.u - center.u ==
        doctest::Approx(delta * (geom.sdd / geom.sid) / geom.pixel_pitch).epsilon(1e-10));
  CHECK(std::abs(moved.u - center.u) ==
        doctest::Approx(delta * 1.536 / geom.pixel_pitch).epsilon(1e-10));

  // At detector depth the lateral magnification is one in mm.
  Vec3 at_detector = pose.to_world(Vec3(delta, 0, geom.sdd));
  PixelCoord far = project_point(pose, geom, at_detector);
  CHECK((far.u - center.u) * geom.pixel_pitch == doctest::Approx(delta).epsilon(1e-10));

  // Behind the source.
  Vec3 behind = pose.to_world(Vec3(0, 0, -10.0));
  CHECK_THROWS_AS(project_point(pose, geom, behind), NumericError);
}

TEST_CASE("perspective jacobian structure and finite differences") {
  ScanGeometry geom = full_scan_geometry();
  double f = geom.focal_px();

  Mat3 on_axis = perspective_jacobian(geom, Vec3(0, 0, 800));
  CHECK(on_axis(0, 0) == doctest::Approx(f / 800).epsilon(1e-14));
  CHECK(on_axis(1, 1) == doctest::Approx(f / 800).epsilon(1e-14));
  CHECK(on_axis(0, 1) == 0.0);
  CHECK(on_axis(0, 2) == 0.0);
  CHECK(on_axis(2, 2) == doctest::Approx(1.0).epsilon(1e-14));

  Mat3 doubled = perspective_jacobian(geom, Vec3(0, 0, 1600));
  CHECK(doubled(0, 0) == doctest::Approx(0.5 * on_axis(0, 0)).epsilon(1e-14));

  Pcg32 rng(5, stream_id("test_jac"));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 t(rng.uniform(-150, 150), rng.uniform(-150, 150), rng.uniform(600, 1500));
    Mat3 jac = perspective_jacobian(geom, t);
    for (int c = 0; c < 3; ++c) {
      double h = 1e-3;
      Vec3 tp = t, tm = t;
      tp[c] += h;
      tm[c] -= h;
      PixelCoord pp = project_camera_point(geom, tp);
      PixelCoord pm = project_camera_point(geom, tm);
      worst = std::max(worst, std::abs((pp.u - pm.u) / (2 * h) - jac(0, c)) /
                                  std::max(1.0, std::abs(jac(0, c))));
      worst = std::max(worst, std::abs((pp.v - pm.v) / (2 * h) - jac(1, c)) /
                                  std::max(1.0, std::abs(jac(1, c))));
    }
    // Third row is the unit ray, orthogonal to the first two rows.
    CHECK(jac.row(2).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(jac.row(0).dot(jac.row(2))) < 1e-12 * jac.row(0).norm());
    CHECK(std::abs(jac.row(1).dot(jac.row(2))) < 1e-12 * jac.row(1).norm());
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("projection pipeline composes and is rotation equivariant") {
  ScanGeometry geom = make_circular_geometry(1000, 1536, 12, kPaperDetector, 116.0);
  Pcg32 rng(17, stream_id("test_equiv"));
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 x(rng.uniform(-120, 120), rng.uniform(-120, 120), rng.uniform(-120, 120));
    int view = int(rng.next_below(12));
    ViewPose pose = view_pose(geom, view);

    // Composition: transform then camera-project equals direct projection.
    PixelCoord direct = project_point(pose, geom, x);
    PixelCoord composed = project_camera_point(geom, pose.to_camera(x));
    CHECK(std::abs(direct.u - composed.u) < 1e-10);
    CHECK(std::abs(direct.v - composed.v) < 1e-10);

    // Equivariance: rotating the world by the view angle, seen from view 0.
    double theta = geom.angles[view];
    Mat3 rot = Eigen::AngleAxisd(-theta, Vec3::UnitZ()).toRotationMatrix();
    PixelCoord from_zero = project_point(view_pose(geom, 0), geom, rot * x);
    CHECK(std::abs(direct.u - from_zero.u) < 1e-8);
    CHECK(std::abs(direct.v - from_zero.v) < 1e-8);
  }
}
