#pragma once

#include <vector>

#include "cbgs/error.hpp"
#include "cbgs/types.hpp"

namespace cbgs {

/// Points closer to the source than this are treated as degenerate. The
/// renderer culls such kernels; the standalone projection ops throw.
inline constexpr double kDepthEpsilonMm = 1.0;

struct DetectorSpec {
  int rows = 0;
  int cols = 0;
  double pixel_pitch = 0.0;  // mm
};

/// Circular cone-beam acquisition geometry.
///
/// World convention: isocenter at the origin, gantry rotation about +z (the
/// patient axis), source trajectory in the x-y plane. At gantry angle theta
/// the source sits at -sid * (cos theta, sin theta, 0) and the central ray
/// points from the source through the isocenter. The lateral detector offset
/// shifts the principal point by +offset_u / pixel_pitch pixels in u
/// (half-fan); this sign choice and the counter-clockwise rotation direction
/// are recorded in the projection metadata.
struct ScanGeometry {
  double sid = 0.0;  // source-to-isocenter distance, mm
  double sdd = 0.0;  // source-to-detector distance, mm
  int n_views = 0;
  std::vector<double> angles;  // radians, uniform over [0, 2pi)
  int detector_rows = 0;
  int detector_cols = 0;
  double pixel_pitch = 0.0;      // mm
  double detector_offset_u = 0.0;  // mm

  /// Focal length in pixels of the pinhole model.
  double focal_px() const { return sdd / pixel_pitch; }
  double center_u() const { return 0.5 * (detector_cols - 1) + detector_offset_u / pixel_pitch; }
  double center_v() const { return 0.5 * (detector_rows - 1); }

  /// Radius (mm) of the cylinder around the rotation axis seen by every view.
  /// Half-fan: the offset enlarges the covered half-width at the detector.
  double fov_radius() const {
    double half_width = 0.5 * detector_cols * pixel_pitch;
    return (half_width + std::abs(detector_offset_u)) * sid / sdd;
  }
};

/// Rigid world-to-camera transform for one view. Camera origin at the source,
/// camera z along the central ray, camera y along world +z (detector rows).
struct ViewPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double angle = 0.0;
  int view_index = 0;
  int time_index = 0;

  Vec3 to_camera(const Vec3& x_world) const { return rotation * x_world + translation; }
  Vec3 to_world(const Vec3& x_camera) const { return rotation.transpose() * (x_camera - translation); }
  Vec3 source_world() const { return -(rotation.transpose() * translation); }
};

struct PixelCoord {
  double u = 0.0;      // pixels
  double v = 0.0;      // pixels
  double depth = 0.0;  // camera-space z, mm
};

ScanGeometry make_circular_geometry(double sid, double sdd, int n_views,
                                    const DetectorSpec& detector, double offset_u);

ViewPose view_pose(const ScanGeometry& geom, int view_index);

/// Pinhole projection of a camera-space point; throws NumericError when the
/// point is at or behind the source plane (depth <= kDepthEpsilonMm).
PixelCoord project_camera_point(const ScanGeometry& geom, const Vec3& t_camera);

PixelCoord project_point(const ViewPose& pose, const ScanGeometry& geom, const Vec3& x_world);

/// Local Jacobian of the perspective map at a camera-space point. Rows 1-2
/// are d(u,v)/d(t_x,t_y,t_z); row 3 is the unit ray direction, so dropping
/// the third axis of J W Sigma W^T J^T marginalizes along the physical ray.
Mat3 perspective_jacobian(const ScanGeometry& geom, const Vec3& t_camera);

/// World position of a detector pixel center and the unit ray through it.
Vec3 detector_pixel_world(const ViewPose& pose, const ScanGeometry& geom, double u, double v);

}  // namespace cbgs
