#include "cbgs/geometry.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cbgs {

ScanGeometry make_circular_geometry(double sid, double sdd, int n_views,
                                    const DetectorSpec& detector, double offset_u) {
  std::ostringstream err;
  if (!(sid > 0.0)) {
    err << "source-to-isocenter distance must be positive, got " << sid;
    throw ValidationError(err.str());
  }
  if (!(sdd > sid)) {
    err << "source-to-detector distance must exceed source-to-isocenter (" << sdd
        << " <= " << sid << ")";
    throw ValidationError(err.str());
  }
  if (n_views < 1) throw ValidationError("need at least one view");
  if (detector.rows < 1 || detector.cols < 1) throw ValidationError("detector dimensions must be positive");
  if (!(detector.pixel_pitch > 0.0)) throw ValidationError("pixel pitch must be positive");

  ScanGeometry geom;
  geom.sid = sid;
  geom.sdd = sdd;
  geom.n_views = n_views;
  geom.detector_rows = detector.rows;
  geom.detector_cols = detector.cols;
  geom.pixel_pitch = detector.pixel_pitch;
  geom.detector_offset_u = offset_u;
  geom.angles.resize(n_views);
  for (int i = 0; i < n_views; ++i) {
    geom.angles[i] = 2.0 * std::numbers::pi * double(i) / double(n_views);
  }
  return geom;
}

ViewPose view_pose(const ScanGeometry& geom, int view_index) {
  if (view_index < 0 || view_index >= geom.n_views) {
    std::ostringstream err;
    err << "view index " << view_index << " out of range [0, " << geom.n_views << ")";
    throw ValidationError(err.str());
  }
  double theta = geom.angles[view_index];
  double c = std::cos(theta);
  double s = std::sin(theta);

  // Camera basis in world coordinates: e_z along the central ray, e_y = +z.
  Vec3 ex(-s, c, 0.0);
  Vec3 ey(0.0, 0.0, 1.0);
  Vec3 ez(c, s, 0.0);
  Vec3 source = -geom.sid * Vec3(c, s, 0.0);

  ViewPose pose;
  pose.rotation.row(0) = ex;
  pose.rotation.row(1) = ey;
  pose.rotation.row(2) = ez;
  pose.translation = -(pose.rotation * source);
  pose.angle = theta;
  pose.view_index = view_index;
  pose.time_index = view_index;
  return pose;
}

PixelCoord project_camera_point(const ScanGeometry& geom, const Vec3& t) {
  if (!(t.z() > kDepthEpsilonMm)) {
    throw NumericError("point at or behind the source plane");
  }
  double f = geom.focal_px();
  PixelCoord p;
  p.u = f * t.x() / t.z() + geom.center_u();
  p.v = f * t.y() / t.z() + geom.center_v();
  p.depth = t.z();
  return p;
}

PixelCoord project_point(const ViewPose& pose, const ScanGeometry& geom, const Vec3& x_world) {
  return project_camera_point(geom, pose.to_camera(x_world));
}

Mat3 perspective_jacobian(const ScanGeometry& geom, const Vec3& t) {
  if (!(t.z() > kDepthEpsilonMm)) {
    throw NumericError("point at or behind the source plane");
  }
  double f = geom.focal_px();
  double inv_z = 1.0 / t.z();
  Mat3 jac;
  jac << f * inv_z, 0.0, -f * t.x() * inv_z * inv_z,
         0.0, f * inv_z, -f * t.y() * inv_z * inv_z,
         0.0, 0.0, 0.0;
  jac.row(2) = (t / t.norm()).transpose();
  return jac;
}

Vec3 detector_pixel_world(const ViewPose& pose, const ScanGeometry& geom, double u, double v) {
  Vec3 t_cam((u - geom.center_u()) * geom.pixel_pitch,
             (v - geom.center_v()) * geom.pixel_pitch,
             geom.sdd);
  return pose.to_world(t_cam);
}

}  // namespace cbgs
