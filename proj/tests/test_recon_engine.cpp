#include <doctest.h>

#include <cmath>

#include "cbgs/density_control.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/recon_engine.hpp"
#include "cbgs/rng.hpp"
#include "cbgs/splat_render.hpp"

using namespace cbgs;

TEST_CASE("l2 loss closed forms") {
  ImageBuffer rendered(8, 8);
  DetectorImage measured(8, 8);
  LossResult zero = l2_loss(rendered, measured);
  CHECK(zero.value == 0.0);
  for (double g : zero.grad.data) CHECK(g == 0.0);

  double c = 0.35;
  for (double& v : rendered.data) v = c;
  LossResult offset = l2_loss(rendered, measured);
  CHECK(offset.value == doctest::Approx(c * c).epsilon(1e-14));
  for (double g : offset.grad.data) {
    CHECK(g == doctest::Approx(2.0 * c / 64.0).epsilon(1e-14));
  }
  CHECK(offset.value >= 0.0);

  DetectorImage wrong(8, 9);
  CHECK_THROWS_AS(l2_loss(rendered, wrong), ValidationError);
}

TEST_CASE("adam optimizer") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState state(3);
    std::vector<double> params = {1.0, -2.0, 0.5};
    std::vector<double> before = params;
    std::vector<double> grads = {0.0, 0.0, 0.0};
    state.step(params, grads, 0.1);
    CHECK(params == before);
    CHECK(state.steps() == 1);
  }

  SUBCASE("first step magnitude is close to the learning rate") {
    AdamState state(1);
    std::vector<double> params = {0.0};
    std::vector<double> grads = {3.7};
    state.step(params, grads, 0.01);
    // Bias correction makes mhat = g and vhat = g^2 on the first step.
    CHECK(params[0] == doctest::Approx(-0.01 * 3.7 / (3.7 + 1e-8)).epsilon(1e-9));
    CHECK(std::abs(params[0]) == doctest::Approx(0.01).epsilon(1e-6));
  }

  SUBCASE("non-finite gradients are skipped and flagged") {
    AdamState state(2);
    std::vector<double> params = {1.0, 2.0};
    std::vector<double> grads = {std::nan(""), 1.0};
    state.step(params, grads, 0.1);
    CHECK(params[0] == 1.0);
    CHECK(params[1] != 2.0);
    CHECK(state.skipped() == 1);
  }

  SUBCASE("append and filter keep rows aligned") {
    AdamState state(4);
    std::vector<double> params = {1, 2, 3, 4};
    std::vector<double> grads = {1, 1, 1, 1};
    state.step(params, grads, 0.1);
    state.append(2);
    CHECK(state.size() == 6);
    std::vector<std::uint8_t> keep = {1, 0, 1};
    state.filter(keep, 2);
    CHECK(state.size() == 4);
  }
}

TEST_CASE("learning-rate schedule endpoints and monotonicity") {
  long total = 1000;
  LrSchedule sched{1e-2, 1e-3};
  CHECK(sched.at(0, total) == 1e-2);
  CHECK(sched.at(total - 1, total) == 1e-3);  // final iteration: exact final rate
  double prev = sched.at(0, total);
  for (long i = 1; i < total; i += 7) {
    double lr = sched.at(i, total);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(linear_lr(5.0, 1.0, 0, 1) == 5.0);
}

namespace {

struct ControlRig {
  GaussianCloud cloud;
  PerGaussianWeights pg;
  AdamState rho, mean, quat, scale, pgw;
  DensifyStats stats;

  explicit ControlRig(int n) {
    cloud.clamp = ScaleClamp{1e-3, 1e4};
    Pcg32 rng(5, stream_id("test_dc"));
    for (int i = 0; i < n; ++i) {
      cloud.push_back(inverse_activate_density(0.02),
                      Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)),
                      Vec4(1, 0, 0, 0), Vec3::Constant(std::log(2.0)));
    }
    pg = PerGaussianWeights::zeros(n, 2);
    rho = AdamState(n);
    mean = AdamState(3 * n);
    quat = AdamState(4 * n);
    scale = AdamState(3 * n);
    pgw = AdamState(pg.values.size());
    stats.resize(n);
  }

  SceneParams scene() {
    SceneParams s;
    s.cloud = &cloud;
    s.pg = &pg;
    s.adam_rho = &rho;
    s.adam_mean = &mean;
    s.adam_quat = &quat;
    s.adam_scale = &scale;
    s.adam_pg = &pgw;
    return s;
  }
};

}  // namespace

TEST_CASE("density control") {
  DensifyConfig cfg;
  cfg.grad_threshold = 1e-3;
  cfg.split_scale_fraction = 0.05;  // times extent 100 -> split above sigma 5

  SUBCASE("quiet kernels stay untouched") {
    ControlRig rig(6);
    Pcg32 rng(1, stream_id("dc"));
    DensifyOutcome out = density_control(rig.scene(), rig.stats, cfg, 100.0, rng);
    CHECK(out.cloned == 0);
    CHECK(out.split == 0);
    CHECK(out.pruned == 0);
    CHECK(rig.cloud.size() == 6);
  }

  SUBCASE("a large high-gradient kernel splits into two smaller ones") {
    ControlRig rig(6);
    rig.cloud.log_scale[2] = Vec3::Constant(std::log(8.0));  // above the split size
    rig.stats.accum[2] = 1.0;
    rig.stats.count[2] = 1;
    Pcg32 rng(2, stream_id("dc"));
    DensifyOutcome out = density_control(rig.scene(), rig.stats, cfg, 100.0, rng);
    CHECK(out.split == 1);
    CHECK(out.cloned == 0);
    CHECK(rig.cloud.size() == 7);
    // Children carry the shrunken scale.
    CHECK(std::exp(rig.cloud.log_scale[2][0]) == doctest::Approx(8.0 / 1.6).epsilon(1e-12));
    CHECK(std::exp(rig.cloud.log_scale[6][0]) == doctest::Approx(8.0 / 1.6).epsilon(1e-12));
    CHECK(rig.mean.size() == 21);
    CHECK(rig.pgw.size() == rig.pg.values.size());
  }

  SUBCASE("a small high-gradient kernel clones with jitter") {
    ControlRig rig(6);
    rig.stats.accum[3] = 1.0;
    rig.stats.count[3] = 1;
    Pcg32 rng(3, stream_id("dc"));
    DensifyOutcome out = density_control(rig.scene(), rig.stats, cfg, 100.0, rng);
    CHECK(out.cloned == 1);
    CHECK(rig.cloud.size() == 7);
    CHECK((rig.cloud.mean[6] - rig.cloud.mean[3]).norm() < 2.0);  // small jitter
    CHECK((rig.cloud.mean[6] - rig.cloud.mean[3]).norm() > 0.0);
  }

  SUBCASE("pruning removes negligible kernels and the render loses their term") {
    ControlRig rig(5);
    rig.cloud.rho_raw[1] = inverse_activate_density(1e-9);
    ScanGeometry geom = make_circular_geometry(1000, 1536, 2, DetectorSpec{32, 32, 6.0}, 0.0);
    ViewPose pose = view_pose(geom, 0);
    CloudSnapshot before = static_snapshot(rig.cloud);
    ImageBuffer with = render_buffer(before.view(), pose, geom);

    // Contribution of the doomed kernel alone.
    std::vector<Vec3> m1 = {rig.cloud.mean[1]};
    std::vector<Mat3> c1 = {before.cov[1]};
    std::vector<double> r1 = {before.rho[1]};
    ImageBuffer lone = render_buffer(KernelView{m1, c1, r1}, pose, geom);

    Pcg32 rng(4, stream_id("dc"));
    DensifyOutcome out = density_control(rig.scene(), rig.stats, cfg, 100.0, rng);
    CHECK(out.pruned == 1);
    CHECK(rig.cloud.size() == 4);

    CloudSnapshot after = static_snapshot(rig.cloud);
    ImageBuffer without = render_buffer(after.view(), pose, geom);
    for (std::size_t p = 0; p < with.data.size(); ++p) {
      CHECK(with.data[p] - without.data[p] == doctest::Approx(lone.data[p]).epsilon(1e-10));
    }

    // Healthy kernels were kept: none of the survivors is below threshold.
    double rho_max = 0.0;
    for (std::size_t n = 0; n < rig.cloud.size(); ++n) {
      rho_max = std::max(rho_max, activate_density(rig.cloud.rho_raw[n]));
    }
    for (std::size_t n = 0; n < rig.cloud.size(); ++n) {
      CHECK(activate_density(rig.cloud.rho_raw[n]) >= cfg.prune_rel_threshold * rho_max);
    }
  }

  SUBCASE("the kernel cap limits growth") {
    ControlRig rig(6);
    for (int n = 0; n < 6; ++n) {
      rig.stats.accum[n] = 1.0;
      rig.stats.count[n] = 1;
    }
    DensifyConfig capped = cfg;
    capped.max_kernels = 8;
    Pcg32 rng(5, stream_id("dc"));
    density_control(rig.scene(), rig.stats, capped, 100.0, rng);
    CHECK(rig.cloud.size() <= 8);
  }
}

namespace {

SimResult tiny_dataset(std::uint64_t seed) {
  SimSpec spec = desk_fixture(seed, false);
  spec.geom = make_circular_geometry(1000, 1536, 12, DetectorSpec{48, 48, 4.5}, 20.0);
  return make_dataset(spec);
}

TrainConfig tiny_config() {
  TrainConfig config;
  config.iterations = 60;
  config.init_points = 150;
  config.densify_interval = 25;
  config.densify_grad_threshold = 1e9;  // quiet
  config.checkpoint_interval = 0;
  config.log_interval = 20;
  config.max_kernels = 500;
  config.seed = 11;
  return config;
}

}  // namespace

TEST_CASE("training smoke run with logging") {
  SimResult data = tiny_dataset(21);
  GridSpec grid = GridSpec::centered(24, 9.0);
  VoxelVolume init = data.truth.volume_at(0.0, grid);

  TrainConfig config = tiny_config();
  int log_rows = 0;
  TrainHooks hooks;
  hooks.on_log = [&log_rows](const TrainLogRow& row) {
    ++log_rows;
    CHECK(std::isfinite(row.loss));
  };
  TrainResult result = train(config, data.projections, init, hooks);
  CHECK(result.cloud.size() > 0);
  CHECK(std::isfinite(result.final_loss));
  CHECK(log_rows == 3);
  CHECK(result.log.size() == 3);
}

TEST_CASE("training is deterministic for a fixed seed") {
  SimResult data = tiny_dataset(22);
  GridSpec grid = GridSpec::centered(24, 9.0);
  VoxelVolume init = data.truth.volume_at(0.0, grid);

  TrainConfig config = tiny_config();
  config.deterministic = true;
  TrainResult a = train(config, data.projections, init);
  TrainResult b = train(config, data.projections, init);
  REQUIRE(a.cloud.size() == b.cloud.size());
  CHECK(a.cloud.rho_raw == b.cloud.rho_raw);
  for (std::size_t n = 0; n < a.cloud.size(); ++n) {
    CHECK(a.cloud.mean[n] == b.cloud.mean[n]);
    CHECK(a.cloud.quat[n] == b.cloud.quat[n]);
    CHECK(a.cloud.log_scale[n] == b.cloud.log_scale[n]);
  }
  CHECK(a.motion.model.lattice.disp == b.motion.model.lattice.disp);
  CHECK(a.motion.model.temporal.ctrl == b.motion.model.temporal.ctrl);
  CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("frozen motion reduces to the static pipeline exactly") {
  // The identity-warp path must render identically to a pipeline that
  // bypasses warp altogether.
  GaussianCloud cloud;
  cloud.clamp = ScaleClamp{1e-3, 1e4};
  Pcg32 rng(31, stream_id("test_static"));
  for (int n = 0; n < 25; ++n) {
    Vec4 q(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    cloud.push_back(rng.uniform(-1, 1),
                    Vec3(rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40)),
                    q.norm() < 0.1 ? Vec4(1, 0, 0, 0) : q,
                    Vec3::Constant(rng.uniform(0.5, 1.5)));
  }
  TrainConfig config;
  config.mode = MotionMode::kDi;
  GridSpec grid = GridSpec::centered(32, 3.0);
  MotionState motion = make_motion_state(config, grid, 40, cloud.size());

  ScanGeometry geom = make_circular_geometry(1000, 1536, 8, DetectorSpec{64, 64, 3.0}, 0.0);
  ViewPose pose = view_pose(geom, 5);
  CloudSnapshot warped = warp(cloud, motion, 17.0, true);
  CloudSnapshot direct = static_snapshot(cloud);
  ImageBuffer via_warp = render_buffer(warped.view(), pose, geom);
  ImageBuffer bypass = render_buffer(direct.view(), pose, geom);
  for (std::size_t p = 0; p < via_warp.data.size(); ++p) {
    CHECK(std::abs(via_warp.data[p] - bypass.data[p]) <= 1e-12);
  }
}
