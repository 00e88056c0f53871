#include "cbgs/recon_engine.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "cbgs/rng.hpp"

namespace cbgs {

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (rank < 1) throw ValidationError("rank must be >= 1");
  if (init_points < 1) throw ValidationError("need at least one init point");
  auto check_schedule = [](const LrSchedule& s, const char* name) {
    if (!(s.init > 0.0) || !(s.final_value > 0.0)) {
      throw ValidationError(std::string("learning rates must be positive: ") + name);
    }
    if (s.final_value > s.init) {
      throw ValidationError(std::string("final learning rate above initial: ") + name);
    }
  };
  check_schedule(lr_rho, "rho");
  check_schedule(lr_mean_rel, "mean");
  check_schedule(lr_quat, "quat");
  check_schedule(lr_scale, "scale");
  check_schedule(lr_lattice, "lattice");
  check_schedule(lr_temporal, "temporal");
  check_schedule(lr_pg, "pergaussian");
  if (temporal_spacing <= 0.0 || lattice_spacing_voxels <= 0.0) {
    throw ValidationError("control-point spacings must be positive");
  }
}

LossResult l2_loss(const ImageBuffer& rendered, const DetectorImage& measured) {
  if (rendered.rows != measured.rows || rendered.cols != measured.cols) {
    throw ValidationError("rendered/measured image dimensions differ");
  }
  LossResult result;
  result.grad = ImageBuffer(rendered.rows, rendered.cols);
  double n = double(rendered.data.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < rendered.data.size(); ++p) {
    double diff = rendered.data[p] - double(measured.data[p]);
    acc += diff * diff;
    result.grad.data[p] = 2.0 * diff / n;
  }
  result.value = acc / n;
  return result;
}

MotionState make_motion_state(const TrainConfig& config, const GridSpec& grid, int n_t,
                              std::size_t n_kernels) {
  MotionState motion;
  motion.mode = config.mode;
  double spacing = config.lattice_spacing_voxels * grid.spacing;
  bool channels = config.mode == MotionMode::kDecoupledFfd;
  motion.model.lattice = SpatialLattice::cover(grid.min_corner(), grid.max_corner(),
                                               Vec3::Constant(spacing), config.rank, channels);
  motion.model.temporal =
      TemporalSpline::make(config.rank, 0.0, double(std::max(1, n_t) - 1), config.temporal_spacing);
  if (config.mode == MotionMode::kPerGaussian) {
    motion.weights = PerGaussianWeights::zeros(n_kernels, config.rank);
  }
  return motion;
}

namespace {

std::span<double> flat(std::vector<Vec3>& v) {
  return {v.empty() ? nullptr : v.front().data(), v.size() * 3};
}
std::span<double> flat4(std::vector<Vec4>& v) {
  return {v.empty() ? nullptr : v.front().data(), v.size() * 4};
}

}  // namespace

TrainResult train(const TrainConfig& config, const ProjectionSet& projections,
                  const VoxelVolume& init_volume, const TrainHooks& hooks) {
  config.validate();
  projections.validate();
  if (projections.views.empty()) throw ValidationError("no projections to fit");
  if (init_volume.data.empty()) throw ValidationError("empty init volume");

  const ScanGeometry& geom = projections.geom;
  const GridSpec& grid = init_volume.grid;
  double extent = grid.extent();

  float vmax = 0.0f;
  for (float v : init_volume.data) vmax = std::max(vmax, v);
  if (!(vmax > 0.0f)) throw ValidationError("init volume has no positive voxel");

  ScaleClamp clamp{config.scale_clamp_min_voxels * grid.spacing,
                   config.scale_clamp_max_fov * extent};
  GaussianCloud cloud = sample_cloud_from_volume(
      init_volume, config.init_points, config.init_threshold_rel * double(vmax), config.seed,
      clamp);

  MotionState motion = make_motion_state(config, grid, projections.n_t, cloud.size());

  AdamState adam_rho(cloud.size());
  AdamState adam_mean(cloud.size() * 3);
  AdamState adam_quat(cloud.size() * 4);
  AdamState adam_scale(cloud.size() * 3);
  AdamState adam_pg(motion.weights.values.size());
  AdamState adam_lattice(motion.model.lattice.disp.size());
  AdamState adam_scale_delta(motion.model.lattice.scale_delta.size());
  AdamState adam_quat_delta(motion.model.lattice.quat_delta.size());
  AdamState adam_temporal(motion.model.temporal.ctrl.size());

  DensifyStats stats;
  stats.resize(cloud.size());
  DensifyConfig densify;
  densify.grad_threshold = config.densify_grad_threshold;
  densify.prune_rel_threshold = config.prune_rel_threshold;
  densify.split_factor = config.split_factor;
  densify.split_scale_fraction = config.split_scale_fraction;
  densify.max_kernels = config.max_kernels;

  RenderOptions render_opt;
  render_opt.low_pass_px2 = config.low_pass_px2;
  render_opt.parallel = config.parallel;

  Pcg32 rng(config.seed, stream_id("train"));
  std::vector<ViewPose> poses(geom.n_views);
  for (int v = 0; v < geom.n_views; ++v) poses[v] = view_pose(geom, v);

  TrainResult result;
  auto start = std::chrono::steady_clock::now();
  long fold_total = 0, clamp_total = 0;
  double loss_value = 0.0;

  for (long iter = 0; iter < config.iterations; ++iter) {
    int view = int(rng.next_below(std::uint32_t(geom.n_views)));
    double t = double(projections.time_index[view]);

    CloudSnapshot snap = warp(cloud, motion, t, config.parallel);
    fold_total += snap.fold_incidents;
    clamp_total += snap.clamp_incidents;

    std::vector<Splat2D> splats = project_snapshot(snap.view(), poses[view], geom, render_opt);
    ImageBuffer image = composite(splats, geom.detector_rows, geom.detector_cols, render_opt);
    LossResult loss = l2_loss(image, projections.views[view]);
    loss_value = loss.value;
    if (!std::isfinite(loss.value)) {
      std::ostringstream err;
      err << "non-finite loss " << loss.value << " at iteration " << iter << " (view " << view
          << ", " << cloud.size() << " kernels, " << fold_total << " fold incidents)";
      throw NumericError(err.str());
    }

    RenderGrads rgrads = render_backward(snap.view(), splats, loss.grad, render_opt);
    WarpGrads wgrads =
        warp_backward(cloud, motion, snap, rgrads.mean, rgrads.cov, rgrads.rho, config.parallel);

    adam_rho.step(cloud.rho_raw, wgrads.cloud.rho_raw, config.lr_rho.at(iter, config.iterations));
    adam_mean.step(flat(cloud.mean), flat(wgrads.cloud.mean),
                   extent * config.lr_mean_rel.at(iter, config.iterations));
    adam_quat.step(flat4(cloud.quat), flat4(wgrads.cloud.quat),
                   config.lr_quat.at(iter, config.iterations));
    adam_scale.step(flat(cloud.log_scale), flat(wgrads.cloud.log_scale),
                    config.lr_scale.at(iter, config.iterations));

    if (!config.freeze_motion) {
      if (motion.mode == MotionMode::kPerGaussian) {
        adam_pg.step(motion.weights.values, wgrads.pg_weights,
                     config.lr_pg.at(iter, config.iterations));
      } else {
        adam_lattice.step(motion.model.lattice.disp, wgrads.motion.disp,
                          config.lr_lattice.at(iter, config.iterations));
        if (motion.mode == MotionMode::kDecoupledFfd) {
          adam_scale_delta.step(motion.model.lattice.scale_delta, wgrads.motion.scale_delta,
                                config.lr_lattice.at(iter, config.iterations));
          adam_quat_delta.step(motion.model.lattice.quat_delta, wgrads.motion.quat_delta,
                               config.lr_lattice.at(iter, config.iterations));
        }
      }
      adam_temporal.step(motion.model.temporal.ctrl, wgrads.motion.temporal,
                         config.lr_temporal.at(iter, config.iterations));
    }

    std::vector<std::uint8_t> live(splats.size());
    for (std::size_t n = 0; n < splats.size(); ++n) live[n] = splats[n].empty() ? 0 : 1;
    stats.accumulate(rgrads.center_grad_norm, live);

    bool densify_window = iter + 1 < long(config.densify_stop_fraction * double(config.iterations));
    if (densify_window && config.densify_interval > 0 &&
        (iter + 1) % config.densify_interval == 0) {
      SceneParams scene;
      scene.cloud = &cloud;
      scene.adam_rho = &adam_rho;
      scene.adam_mean = &adam_mean;
      scene.adam_quat = &adam_quat;
      scene.adam_scale = &adam_scale;
      if (motion.mode == MotionMode::kPerGaussian) {
        scene.pg = &motion.weights;
        scene.adam_pg = &adam_pg;
      }
      density_control(scene, stats, densify, extent, rng);
    }

    if (hooks.on_log && config.log_interval > 0 &&
        ((iter + 1) % config.log_interval == 0 || iter + 1 == config.iterations)) {
      TrainLogRow row;
      row.iteration = iter + 1;
      row.loss = loss.value;
      row.kernels = cloud.size();
      row.fold_incidents = fold_total;
      row.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      result.log.push_back(row);
      hooks.on_log(row);
    }

    if (hooks.on_checkpoint && config.checkpoint_interval > 0 &&
        (iter + 1) % config.checkpoint_interval == 0 && iter + 1 != config.iterations) {
      hooks.on_checkpoint(iter + 1, cloud, motion);
    }
  }

  if (hooks.on_checkpoint) hooks.on_checkpoint(config.iterations, cloud, motion);

  result.cloud = std::move(cloud);
  result.motion = std::move(motion);
  result.fold_incidents = fold_total;
  result.clamp_incidents = clamp_total;
  result.skipped_gradients = adam_rho.skipped() + adam_mean.skipped() + adam_quat.skipped() +
                             adam_scale.skipped() + adam_lattice.skipped() +
                             adam_temporal.skipped() + adam_pg.skipped();
  result.final_loss = loss_value;
  return result;
}

}  // namespace cbgs
