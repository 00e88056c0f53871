#include "cbgs/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "cbgs/ffd_motion.hpp"
#include "cbgs/rng.hpp"

namespace cbgs {

namespace {

// Central differences measure a derivative only down to the cancellation
// noise eps * |L| / (2h); components whose disagreement sits below that
// floor carry no information and are accepted.
struct RelTracker {
  double abs_floor = 0.0;
  std::vector<std::pair<double, double>> pairs;  // (analytic, fd)

  void set_floor(double loss_scale, double h) {
    abs_floor = 250.0 * std::numeric_limits<double>::epsilon() *
                std::max(1.0, std::abs(loss_scale)) / (2.0 * h);
  }
  void add(double analytic, double fd) { pairs.emplace_back(analytic, fd); }
  double max_rel() const {
    double worst = 0.0;
    for (auto [a, f] : pairs) {
      double diff = std::abs(a - f);
      if (diff <= abs_floor) continue;
      worst = std::max(worst, diff / std::max(std::abs(a), std::abs(f)));
    }
    return worst;
  }
};

struct Rig {
  ScanGeometry geom;
  ViewPose pose;
  GaussianCloud cloud;
  ImageBuffer upstream;
  RenderOptions opt;
};

Rig make_rig(std::uint64_t seed, int view) {
  Rig rig;
  rig.geom = make_circular_geometry(1000.0, 1536.0, 5, DetectorSpec{32, 32, 4.0}, 2.0);
  rig.pose = view_pose(rig.geom, view % rig.geom.n_views);
  rig.opt.parallel = false;

  Pcg32 rng(seed, stream_id("gradcheck"));
  rig.cloud.clamp = ScaleClamp{1e-3, 1e5};
  for (int n = 0; n < 10; ++n) {
    Vec3 mu(rng.uniform(-18.0, 18.0), rng.uniform(-18.0, 18.0), rng.uniform(-18.0, 18.0));
    Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    if (q.norm() < 0.1) q = Vec4(1, 0, 0, 0);
    Vec3 s(rng.uniform(1.0, 1.8), rng.uniform(1.0, 1.8), rng.uniform(1.0, 1.8));  // log-mm
    rig.cloud.push_back(rng.uniform(-1.0, 1.5), mu, q, s);
  }

  rig.upstream = ImageBuffer(rig.geom.detector_rows, rig.geom.detector_cols);
  for (double& g : rig.upstream.data) g = rng.uniform(-1.0, 1.0);
  return rig;
}

double contract(const ImageBuffer& image, const ImageBuffer& upstream) {
  double acc = 0.0;
  for (std::size_t p = 0; p < image.data.size(); ++p) acc += image.data[p] * upstream.data[p];
  return acc;
}

double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

GradCheckResult check_render_gradients(std::uint64_t seed) {
  Rig rig = make_rig(seed, 1);
  std::vector<Vec3> mean;
  std::vector<Mat3> cov;
  std::vector<double> rho;
  activate_cloud(rig.cloud, mean, cov, rho);
  KernelView view{mean, cov, rho};

  std::vector<Mat3> jacs = snapshot_jacobians(view, rig.pose, rig.geom);
  std::vector<Splat2D> splats = project_snapshot(view, rig.pose, rig.geom, rig.opt);
  RenderGrads grads = render_backward(view, splats, rig.upstream, rig.opt);

  auto loss_frozen = [&](const KernelView& kv) {
    std::vector<Splat2D> s = project_snapshot_frozen(kv, rig.pose, rig.geom, jacs, rig.opt);
    ImageBuffer img = composite(s, rig.geom.detector_rows, rig.geom.detector_cols, rig.opt);
    return contract(img, rig.upstream);
  };

  GradCheckResult result;
  double loss_scale = loss_frozen(view);
  RelTracker track_rho, track_mean, track_cov;
  track_rho.set_floor(loss_scale, 1e-4);
  track_mean.set_floor(loss_scale, 1e-3);
  track_cov.set_floor(loss_scale, 1e-3);
  for (std::size_t n = 0; n < view.size(); ++n) {
    {
      double base = rho[n];
      double fd = central_diff(
          [&](double v) {
            rho[n] = v;
            double l = loss_frozen(view);
            rho[n] = base;
            return l;
          },
          base, 1e-4);
      track_rho.add(grads.rho[n], fd);
    }
    for (int c = 0; c < 3; ++c) {
      double base = mean[n][c];
      double fd = central_diff(
          [&](double v) {
            mean[n][c] = v;
            double l = loss_frozen(view);
            mean[n][c] = base;
            return l;
          },
          base, 1e-3);
      track_mean.add(grads.mean[n][c], fd);
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double base = cov[n](a, b);
        double fd = central_diff(
            [&](double v) {
              cov[n](a, b) = v;
              double l = loss_frozen(view);
              cov[n](a, b) = base;
              return l;
            },
            base, 1e-3);
        track_cov.add(grads.cov[n](a, b), fd);
      }
    }
  }
  result.max_rel_error["rho"] = track_rho.max_rel();
  result.max_rel_error["mean"] = track_mean.max_rel();
  result.max_rel_error["cov"] = track_cov.max_rel();
  return result;
}

namespace {

MotionState make_test_motion(MotionMode mode, const GaussianCloud& cloud, std::uint64_t seed) {
  Pcg32 rng(seed, stream_id("gradcheck_motion"));
  MotionState motion;
  motion.mode = mode;
  bool channels = mode == MotionMode::kDecoupledFfd;
  motion.model.lattice = SpatialLattice::cover(Vec3::Constant(-24.0), Vec3::Constant(24.0),
                                               Vec3::Constant(16.0), 2, channels);
  motion.model.temporal = TemporalSpline::make(2, 0.0, 19.0, 4.0);
  for (double& c : motion.model.temporal.ctrl) c = rng.uniform(-0.8, 0.8);
  for (double& d : motion.model.lattice.disp) d = rng.uniform(-1.5, 1.5);
  for (double& d : motion.model.lattice.scale_delta) d = rng.uniform(-0.1, 0.1);
  for (double& d : motion.model.lattice.quat_delta) d = rng.uniform(-0.1, 0.1);
  if (mode == MotionMode::kPerGaussian) {
    motion.weights = PerGaussianWeights::zeros(cloud.size(), 2);
    for (double& w : motion.weights.values) w = rng.uniform(-1.0, 1.0);
  }
  return motion;
}

}  // namespace

GradCheckResult check_warp_gradients(MotionMode mode, std::uint64_t seed) {
  Rig rig = make_rig(seed, 2);
  MotionState motion = make_test_motion(mode, rig.cloud, seed);
  double t = 7.3;

  CloudSnapshot base_snap = warp(rig.cloud, motion, t, false);
  std::vector<Mat3> jacs = snapshot_jacobians(base_snap.view(), rig.pose, rig.geom);
  std::vector<Splat2D> splats = project_snapshot(base_snap.view(), rig.pose, rig.geom, rig.opt);
  RenderGrads rgrads = render_backward(base_snap.view(), splats, rig.upstream, rig.opt);
  WarpGrads grads = warp_backward(rig.cloud, motion, base_snap, rgrads.mean, rgrads.cov,
                                  rgrads.rho, false);

  auto loss_now = [&]() {
    CloudSnapshot snap = warp(rig.cloud, motion, t, false);
    std::vector<Splat2D> s = project_snapshot_frozen(snap.view(), rig.pose, rig.geom, jacs, rig.opt);
    ImageBuffer img = composite(s, rig.geom.detector_rows, rig.geom.detector_cols, rig.opt);
    return contract(img, rig.upstream);
  };
  auto fd_param = [&](double* p, double h) {
    double base = *p;
    *p = base + h;
    double lp = loss_now();
    *p = base - h;
    double lm = loss_now();
    *p = base;
    return (lp - lm) / (2.0 * h);
  };

  GradCheckResult result;
  double loss_scale = loss_now();
  RelTracker t_rho, t_mean, t_quat, t_scale;
  t_rho.set_floor(loss_scale, 1e-4);
  t_mean.set_floor(loss_scale, 1e-3);
  t_quat.set_floor(loss_scale, 1e-4);
  t_scale.set_floor(loss_scale, 1e-4);
  for (std::size_t n = 0; n < rig.cloud.size(); ++n) {
    t_rho.add(grads.cloud.rho_raw[n], fd_param(&rig.cloud.rho_raw[n], 1e-4));
    for (int c = 0; c < 3; ++c) {
      t_mean.add(grads.cloud.mean[n][c], fd_param(&rig.cloud.mean[n][c], 1e-3));
    }
    for (int c = 0; c < 4; ++c) {
      t_quat.add(grads.cloud.quat[n][c], fd_param(&rig.cloud.quat[n][c], 1e-4));
    }
    for (int c = 0; c < 3; ++c) {
      t_scale.add(grads.cloud.log_scale[n][c], fd_param(&rig.cloud.log_scale[n][c], 1e-4));
    }
  }
  result.max_rel_error["rho"] = t_rho.max_rel();
  result.max_rel_error["mean"] = t_mean.max_rel();
  result.max_rel_error["quat"] = t_quat.max_rel();
  result.max_rel_error["scale"] = t_scale.max_rel();

  RelTracker t_temporal;
  t_temporal.set_floor(loss_scale, 1e-4);
  for (std::size_t i = 0; i < motion.model.temporal.ctrl.size(); ++i) {
    t_temporal.add(grads.motion.temporal[i], fd_param(&motion.model.temporal.ctrl[i], 1e-4));
  }
  result.max_rel_error["temporal"] = t_temporal.max_rel();

  if (mode == MotionMode::kPerGaussian) {
    RelTracker t_pg;
    t_pg.set_floor(loss_scale, 1e-4);
    for (std::size_t i = 0; i < motion.weights.values.size(); ++i) {
      t_pg.add(grads.pg_weights[i], fd_param(&motion.weights.values[i], 1e-4));
    }
    result.max_rel_error["pg_weights"] = t_pg.max_rel();
  } else {
    RelTracker t_disp;
    t_disp.set_floor(loss_scale, 1e-3);
    for (std::size_t i = 0; i < motion.model.lattice.disp.size(); ++i) {
      t_disp.add(grads.motion.disp[i], fd_param(&motion.model.lattice.disp[i], 1e-3));
    }
    result.max_rel_error["lattice_disp"] = t_disp.max_rel();
    if (mode == MotionMode::kDecoupledFfd) {
      RelTracker t_sd, t_qd;
      t_sd.set_floor(loss_scale, 1e-4);
      t_qd.set_floor(loss_scale, 1e-4);
      for (std::size_t i = 0; i < motion.model.lattice.scale_delta.size(); ++i) {
        t_sd.add(grads.motion.scale_delta[i], fd_param(&motion.model.lattice.scale_delta[i], 1e-4));
      }
      for (std::size_t i = 0; i < motion.model.lattice.quat_delta.size(); ++i) {
        t_qd.add(grads.motion.quat_delta[i], fd_param(&motion.model.lattice.quat_delta[i], 1e-4));
      }
      result.max_rel_error["lattice_scale_delta"] = t_sd.max_rel();
      result.max_rel_error["lattice_quat_delta"] = t_qd.max_rel();
    }
  }
  return result;
}

GradCheckResult check_motion_gradients(std::uint64_t seed) {
  Pcg32 rng(seed, stream_id("gradcheck_ffd"));
  FFDMotionModel model;
  model.lattice = SpatialLattice::cover(Vec3::Constant(-20.0), Vec3::Constant(20.0),
                                        Vec3::Constant(10.0), 2, false);
  model.temporal = TemporalSpline::make(2, 0.0, 15.0, 4.0);
  for (double& d : model.lattice.disp) d = rng.uniform(-2.0, 2.0);
  for (double& c : model.temporal.ctrl) c = rng.uniform(-1.0, 1.0);

  const int n_probes = 6;
  std::vector<Vec3> probes(n_probes);
  std::vector<double> times(n_probes);
  std::vector<Vec3> a(n_probes);
  std::vector<Mat3> b(n_probes);
  for (int i = 0; i < n_probes; ++i) {
    probes[i] = Vec3(rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0));
    times[i] = rng.uniform(0.5, 14.5);
    a[i] = Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) b[i](r, c) = rng.next_normal();
  }

  auto loss_now = [&]() {
    double acc = 0.0;
    for (int i = 0; i < n_probes; ++i) {
      acc += a[i].dot(displacement(model, probes[i], times[i]));
      acc += (b[i].array() * motion_jacobian(model, probes[i], times[i]).array()).sum();
    }
    return acc;
  };

  MotionGrads grads = MotionGrads::zeros_like(model);
  std::vector<Vec3> dx(n_probes);
  for (int i = 0; i < n_probes; ++i) {
    dx[i] = motion_backward(model, probes[i], times[i], a[i], b[i], grads);
  }

  auto fd_param = [&](double* p, double h) {
    double base = *p;
    *p = base + h;
    double lp = loss_now();
    *p = base - h;
    double lm = loss_now();
    *p = base;
    return (lp - lm) / (2.0 * h);
  };

  GradCheckResult result;
  double loss_scale = loss_now();
  RelTracker t_disp, t_temporal, t_x;
  t_disp.set_floor(loss_scale, 1e-3);
  t_temporal.set_floor(loss_scale, 1e-4);
  t_x.set_floor(loss_scale, 1e-3);
  for (std::size_t i = 0; i < model.lattice.disp.size(); ++i) {
    t_disp.add(grads.disp[i], fd_param(&model.lattice.disp[i], 1e-3));
  }
  for (std::size_t i = 0; i < model.temporal.ctrl.size(); ++i) {
    t_temporal.add(grads.temporal[i], fd_param(&model.temporal.ctrl[i], 1e-4));
  }
  for (int i = 0; i < n_probes; ++i) {
    for (int c = 0; c < 3; ++c) {
      double base = probes[i][c];
      auto f = [&](double v) {
        probes[i][c] = v;
        double l = a[i].dot(displacement(model, probes[i], times[i])) +
                   (b[i].array() * motion_jacobian(model, probes[i], times[i]).array()).sum();
        probes[i][c] = base;
        return l;
      };
      t_x.add(dx[i][c], central_diff(f, base, 1e-3));
    }
  }
  result.max_rel_error["lattice_disp"] = t_disp.max_rel();
  result.max_rel_error["temporal"] = t_temporal.max_rel();
  result.max_rel_error["point"] = t_x.max_rel();
  return result;
}

}  // namespace cbgs
