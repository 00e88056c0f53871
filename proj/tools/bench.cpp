// Timing comparison of the OpenMP kernels against their serial reference
// implementations on a desk-scale scene.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/recon_engine.hpp"
#include "cbgs/rng.hpp"
#include "cbgs/splat_render.hpp"
#include "cbgs/warp.hpp"

using namespace cbgs;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warmup
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  SimSpec spec = desk_fixture(7, false);
  ScanGeometry geom = spec.geom;
  ViewPose pose = view_pose(geom, 13);

  // A cloud of the size the reconstruction actually runs with.
  GridSpec grid = GridSpec::centered(64, 3.2);
  VoxelVolume init = rasterize_kernels(spec.phantom.view(), grid);
  GaussianCloud cloud =
      sample_cloud_from_volume(init, 4000, 1e-4, 7, ScaleClamp{0.32, 100.0});

  TrainConfig config;
  config.mode = MotionMode::kDi;
  MotionState motion = make_motion_state(config, grid, geom.n_views, cloud.size());
  Pcg32 rng(3, stream_id("bench"));
  for (double& d : motion.model.lattice.disp) d = rng.uniform(-2.0, 2.0);
  for (double& c : motion.model.temporal.ctrl) c = rng.uniform(-0.5, 0.5);

  double t = 17.0;
  CloudSnapshot snap = warp(cloud, motion, t);
  RenderOptions par_opt, ser_opt;
  ser_opt.parallel = false;
  std::vector<Splat2D> splats = project_snapshot(snap.view(), pose, geom, par_opt);
  ImageBuffer image = composite(splats, geom.detector_rows, geom.detector_cols, par_opt);
  ImageBuffer upstream(geom.detector_rows, geom.detector_cols);
  for (std::size_t p = 0; p < upstream.data.size(); ++p) upstream.data[p] = 1.0;

  report("analytic projection",
         time_ms([&] { analytic_project_reference(spec.phantom.view(), pose, geom); }, 3),
         time_ms([&] { analytic_project_buffer(spec.phantom.view(), pose, geom, true); }, 3));

  report("splat forward (tiled)",
         time_ms([&] {
           auto s = project_snapshot(snap.view(), pose, geom, ser_opt);
           composite(s, geom.detector_rows, geom.detector_cols, ser_opt);
         }, 5),
         time_ms([&] {
           auto s = project_snapshot(snap.view(), pose, geom, par_opt);
           composite(s, geom.detector_rows, geom.detector_cols, par_opt);
         }, 5));

  report("splat forward (naive ref)",
         time_ms([&] { composite_reference(splats, geom.detector_rows, geom.detector_cols); }, 3),
         time_ms([&] { composite(splats, geom.detector_rows, geom.detector_cols, par_opt); }, 5));

  report("splat backward",
         time_ms([&] { render_backward(snap.view(), splats, upstream, ser_opt); }, 5),
         time_ms([&] { render_backward(snap.view(), splats, upstream, par_opt); }, 5));

  report("warp",
         time_ms([&] { warp(cloud, motion, t, false); }, 5),
         time_ms([&] { warp(cloud, motion, t, true); }, 5));

  RenderGrads rgrads = render_backward(snap.view(), splats, upstream, par_opt);
  report("warp backward",
         time_ms([&] {
           warp_backward(cloud, motion, snap, rgrads.mean, rgrads.cov, rgrads.rho, false);
         }, 5),
         time_ms([&] {
           warp_backward(cloud, motion, snap, rgrads.mean, rgrads.cov, rgrads.rho, true);
         }, 5));

  report("rasterize 64^3",
         time_ms([&] { rasterize_kernels(snap.view(), grid, false); }, 3),
         time_ms([&] { rasterize_kernels(snap.view(), grid, true); }, 3));

  return 0;
}
