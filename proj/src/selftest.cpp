#include "cbgs/selftest.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "cbgs/gradcheck.hpp"
#include "cbgs/io.hpp"
#include "cbgs/metrics.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/recon_engine.hpp"
#include "cbgs/rng.hpp"
#include "cbgs/splat_render.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

namespace {

double quadrature_line_integral(const Mat3& cov, const Vec3& offset, double half_range, int n) {
  Mat3 inv = cov.inverse();
  auto f = [&](double w) {
    Vec3 x = offset + Vec3(0, 0, w);
    return std::exp(-0.5 * x.dot(inv * x));
  };
  // Composite Simpson.
  double h = 2.0 * half_range / n;
  double acc = f(-half_range) + f(half_range);
  for (int i = 1; i < n; ++i) acc += f(-half_range + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

SpatialLattice affine_lattice(const Mat3& linear, const Vec3& box, double spacing) {
  SpatialLattice lat =
      SpatialLattice::cover(-box, box, Vec3::Constant(spacing), 1, false);
  for (int k = 0; k < lat.dims.z(); ++k) {
    for (int j = 0; j < lat.dims.y(); ++j) {
      for (int i = 0; i < lat.dims.x(); ++i) {
        Vec3 pos = lat.origin + lat.spacing.cwiseProduct(Vec3(i, j, k));
        Vec3 d = linear * pos;
        std::size_t off = lat.disp_offset(0, lat.node_index(i, j, k));
        lat.disp[off] = d.x();
        lat.disp[off + 1] = d.y();
        lat.disp[off + 2] = d.z();
      }
    }
  }
  return lat;
}

FFDMotionModel affine_model(const Mat3& linear, const Vec3& box, double spacing, int n_t) {
  FFDMotionModel model;
  model.lattice = affine_lattice(linear, box, spacing);
  model.temporal = TemporalSpline::make(1, 0.0, double(n_t - 1), 4.0);
  for (double& c : model.temporal.ctrl) c = 1.0;  // omega == 1 everywhere
  return model;
}

}  // namespace

int run_selftest(std::ostream& os) {
  int failures = 0;
  auto check = [&](const std::string& name, bool pass, const std::string& detail = "") {
    os << (pass ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) os << "  " << detail;
    os << "\n";
    if (!pass) ++failures;
  };
  auto detail_val = [](double v) {
    std::ostringstream s;
    s << "err=" << v;
    return s.str();
  };

  // Geometry pinhole conventions.
  {
    ScanGeometry geom = full_scan_geometry();
    ViewPose pose = view_pose(geom, 0);
    PixelCoord center = project_point(pose, geom, Vec3::Zero());
    double err = std::max(std::abs(center.u - geom.center_u()),
                          std::abs(center.v - geom.center_v()));
    err = std::max(err, std::abs(center.depth - geom.sid));
    check("geometry: isocenter at principal point, depth sid", err < 1e-9, detail_val(err));
  }

  // Perspective Jacobian vs finite differences.
  {
    ScanGeometry geom = full_scan_geometry();
    Pcg32 rng(7, stream_id("selftest_jac"));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Vec3 t(rng.uniform(-120, 120), rng.uniform(-120, 120), rng.uniform(700, 1400));
      Mat3 jac = perspective_jacobian(geom, t);
      for (int c = 0; c < 3; ++c) {
        double h = 1e-3;
        Vec3 tp = t, tm = t;
        tp[c] += h;
        tm[c] -= h;
        PixelCoord pp = project_camera_point(geom, tp);
        PixelCoord pm = project_camera_point(geom, tm);
        double fdu = (pp.u - pm.u) / (2 * h);
        double fdv = (pp.v - pm.v) / (2 * h);
        worst = std::max(worst, std::abs(fdu - jac(0, c)) / std::max(1.0, std::abs(fdu)));
        worst = std::max(worst, std::abs(fdv - jac(1, c)) / std::max(1.0, std::abs(fdv)));
      }
    }
    check("geometry: perspective Jacobian matches finite differences", worst <= 1e-6,
          detail_val(worst));
  }

  // Integration factor vs quadrature.
  {
    Pcg32 rng(11, stream_id("selftest_factor"));
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
      Vec3 s(rng.uniform(0.0, 1.2), rng.uniform(0.0, 1.2), rng.uniform(0.0, 1.2));
      Mat3 cov = assemble_covariance(q, s, ScaleClamp{1e-3, 1e4});
      double factor = integration_factor(cov);
      Vec2 u0(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
      double quad =
          quadrature_line_integral(cov, Vec3(u0.x(), u0.y(), 0.0), 14.0 * std::sqrt(cov(2, 2)), 40000);
      Mat2 m2 = cov.topLeftCorner<2, 2>();
      double marg = std::exp(-0.5 * u0.dot(m2.inverse() * u0));
      double rel = std::abs(quad - factor * marg) / (factor * marg);
      worst = std::max(worst, rel);
    }
    check("splatting: integration factor equals ray quadrature", worst <= 1e-6, detail_val(worst));
  }

  // Single-kernel render vs the analytic projector.
  {
    ScanGeometry geom = full_scan_geometry();
    Pcg32 rng(23, stream_id("selftest_splat"));
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Vec3> mean = {Vec3(rng.uniform(-60, 60), rng.uniform(-60, 60),
                                     rng.uniform(-60, 60))};
      Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
      Vec3 s = Vec3::Constant(std::log(rng.uniform(3.0, 9.0)));
      std::vector<Mat3> cov = {assemble_covariance(q, s, ScaleClamp{1e-3, 1e4})};
      std::vector<double> rho = {0.02};
      KernelView kv{mean, cov, rho};
      ViewPose pose = view_pose(geom, trial);
      ImageBuffer splat = render_buffer(kv, pose, geom);
      ImageBuffer exact = analytic_project_buffer(kv, pose, geom);
      double peak = 0.0, diff = 0.0;
      for (std::size_t p = 0; p < exact.data.size(); ++p) {
        peak = std::max(peak, exact.data[p]);
        diff = std::max(diff, std::abs(exact.data[p] - splat.data[p]));
      }
      worst = std::max(worst, diff / peak);
    }
    check("splatting: render matches analytic projection within 2% of peak", worst <= 0.02,
          detail_val(worst));
  }

  // Tiled vs naive compositing.
  {
    Pcg32 rng(31, stream_id("selftest_tiles"));
    ScanGeometry geom = make_circular_geometry(1000, 1536, 4, DetectorSpec{64, 64, 3.2}, 5.0);
    ViewPose pose = view_pose(geom, 1);
    std::vector<Vec3> mean;
    std::vector<Mat3> cov;
    std::vector<double> rho;
    for (int n = 0; n < 40; ++n) {
      mean.emplace_back(rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-60, 60));
      Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
      Vec3 s = Vec3::Constant(std::log(rng.uniform(2.0, 10.0)));
      cov.push_back(assemble_covariance(q, s, ScaleClamp{1e-3, 1e4}));
      rho.push_back(rng.uniform(0.005, 0.03));
    }
    KernelView kv{mean, cov, rho};
    std::vector<Splat2D> splats = project_snapshot(kv, pose, geom);
    ImageBuffer tiled = composite(splats, geom.detector_rows, geom.detector_cols);
    ImageBuffer naive = composite_reference(splats, geom.detector_rows, geom.detector_cols);
    bool equal = tiled.data == naive.data;
    check("splatting: tiled compositor equals the naive double loop bit for bit", equal);
  }

  // Gradient suites.
  {
    GradCheckResult r = check_render_gradients(101);
    check("gradients: renderer backward vs finite differences", r.worst() <= 1e-4,
          detail_val(r.worst()));
  }
  for (MotionMode mode :
       {MotionMode::kDi, MotionMode::kDecoupledFfd, MotionMode::kPerGaussian}) {
    GradCheckResult r = check_warp_gradients(mode, 202);
    std::string name = std::string("gradients: warp+render chain, mode ") + motion_mode_name(mode);
    check(name, r.worst() <= 1e-4, detail_val(r.worst()));
  }
  {
    GradCheckResult r = check_motion_gradients(303);
    check("gradients: motion-model adjoint vs finite differences", r.worst() <= 1e-5,
          detail_val(r.worst()));
  }

  // B-spline partition of unity and linear precision.
  {
    Pcg32 rng(41, stream_id("selftest_ffd"));
    double worst_pu = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      BsplineBasis w = bspline_weights(rng.next_double());
      worst_pu = std::max(worst_pu, std::abs(w.w[0] + w.w[1] + w.w[2] + w.w[3] - 1.0));
    }
    check("ffd: partition of unity within 1e-14", worst_pu <= 1e-14, detail_val(worst_pu));

    Mat3 linear;
    linear << 0.06, 0.02, -0.01, -0.03, 0.04, 0.02, 0.01, -0.02, 0.05;
    FFDMotionModel model = affine_model(linear, Vec3::Constant(40.0), 16.0, 20);
    double worst_lin = 0.0, worst_jac = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      Vec3 x(rng.uniform(-35, 35), rng.uniform(-35, 35), rng.uniform(-35, 35));
      double t = rng.uniform(0.0, 19.0);
      Vec3 want = x + linear * x;
      worst_lin = std::max(worst_lin, (displacement(model, x, t) - want).norm());
      worst_jac = std::max(
          worst_jac,
          (motion_jacobian(model, x, t) - (Mat3::Identity() + linear)).cwiseAbs().maxCoeff());
    }
    check("ffd: affine lattices reproduced exactly (linear precision)",
          worst_lin <= 1e-10 && worst_jac <= 1e-10,
          detail_val(std::max(worst_lin, worst_jac)));
  }

  // DI warp: rotation lattice preserves determinants; mode equivalence.
  {
    Pcg32 rng(53, stream_id("selftest_warp"));
    Mat3 rot = Eigen::AngleAxisd(0.3, Vec3(0.2, 0.5, 0.8).normalized()).toRotationMatrix();
    FFDMotionModel model = affine_model(rot - Mat3::Identity(), Vec3::Constant(40.0), 16.0, 20);
    GaussianCloud cloud;
    cloud.clamp = ScaleClamp{1e-3, 1e4};
    for (int n = 0; n < 20; ++n) {
      cloud.push_back(rng.uniform(-1, 1),
                      Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30)),
                      Vec4(rng.next_normal(), rng.next_normal(), rng.next_normal(),
                           rng.next_normal()),
                      Vec3(rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)));
    }
    CloudSnapshot snap = warp_di(cloud, model, 5.0, false);
    double worst = 0.0;
    for (std::size_t n = 0; n < cloud.size(); ++n) {
      Mat3 cov0 = assemble_covariance(cloud.quat[n], cloud.log_scale[n], cloud.clamp);
      worst = std::max(worst, std::abs(snap.cov[n].determinant() / cov0.determinant() - 1.0));
    }
    check("warp: rigid-rotation lattice preserves covariance determinants", worst <= 1e-8,
          detail_val(worst));

    FFDMotionModel channel_model = model;
    channel_model.lattice.has_attribute_channels = true;
    channel_model.lattice.scale_delta.assign(std::size_t(1) * channel_model.lattice.nodes() * 3, 0.0);
    channel_model.lattice.quat_delta.assign(std::size_t(1) * channel_model.lattice.nodes() * 4, 0.0);
    for (double& v : channel_model.lattice.scale_delta) v = rng.uniform(-0.1, 0.1);
    for (double& v : channel_model.lattice.quat_delta) v = rng.uniform(-0.1, 0.1);
    CloudSnapshot dec = warp_decoupled(cloud, channel_model, 5.0, false);
    PerGaussianWeights weights = weights_from_lattice(cloud, channel_model);
    CloudSnapshot pg = warp_per_gaussian(cloud, channel_model.temporal, weights, 5.0, false);
    double worst_eq = 0.0;
    for (std::size_t n = 0; n < cloud.size(); ++n) {
      worst_eq = std::max(worst_eq, (dec.mean[n] - pg.mean[n]).norm());
      worst_eq = std::max(worst_eq, (dec.cov[n] - pg.cov[n]).cwiseAbs().maxCoeff());
    }
    check("warp: per-gaussian weights copied from the lattice match decoupled mode",
          worst_eq <= 1e-12, detail_val(worst_eq));
  }

  // Noise model limits.
  {
    NoiseSpec clean{1e12, 0.0, 99};
    DetectorImage img(64, 64);
    Pcg32 rng(61, stream_id("selftest_noise"));
    for (float& v : img.data) v = float(rng.uniform(0.0, 5.0));
    DetectorImage noisy = add_noise(img, clean, 0);
    double worst = 0.0;
    for (std::size_t p = 0; p < img.data.size(); ++p) {
      worst = std::max(worst, std::abs(double(noisy.data[p]) - double(img.data[p])));
    }
    check("noise: lambda=1e12 reproduces line integrals within 1e-3", worst <= 1e-3,
          detail_val(worst));
  }

  // Determinism of the simulator.
  {
    SimSpec spec = desk_fixture(1234, true);
    spec.geom = make_circular_geometry(1000, 1536, 6, DetectorSpec{64, 64, 3.2}, 29.0);
    SimResult a = make_dataset(spec);
    SimResult b = make_dataset(spec);
    bool equal = a.projections.views.size() == b.projections.views.size();
    for (std::size_t v = 0; equal && v < a.projections.views.size(); ++v) {
      equal = a.projections.views[v].data == b.projections.views[v].data;
    }
    check("determinism: dataset regeneration is bit-identical", equal);
  }

  os << (failures == 0 ? "selftest passed" : "selftest FAILED") << " (" << failures
     << " failing checks)\n";
  return failures;
}

}  // namespace cbgs
