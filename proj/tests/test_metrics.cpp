#include <doctest.h>

#include <cmath>
#include <limits>

#include "cbgs/metrics.hpp"
#include "cbgs/rng.hpp"

using namespace cbgs;

namespace {

ScanGeometry desk_geom() {
  return make_circular_geometry(1000, 1536, 8, DetectorSpec{128, 128, 1.6}, 58.0);
}

}  // namespace

TEST_CASE("fov mask geometry") {
  GridSpec grid = GridSpec::centered(32, 8.0);

  // Zero offset: radius = half-width * sid / sdd.
  ScanGeometry centered = make_circular_geometry(1000, 1536, 4, DetectorSpec{128, 128, 1.6}, 0.0);
  FovMask plain = fov_mask(centered, grid);
  CHECK(plain.radius_mm == doctest::Approx(102.4 * 1000.0 / 1536.0).epsilon(1e-12));

  // Paper geometry: (204.8 + 116) * 1000 / 1536 = 208.85 mm.
  ScanGeometry paper = make_circular_geometry(1000, 1536, 4, DetectorSpec{512, 512, 0.8}, 116.0);
  FovMask half_fan = fov_mask(paper, GridSpec::centered(64, 8.0));
  CHECK(half_fan.radius_mm == doctest::Approx(208.854).epsilon(1e-4));

  // Quarter-turn symmetry about the axis at the voxel level.
  FovMask mask = fov_mask(desk_geom(), grid);
  for (int k = 0; k < grid.dims.z(); ++k) {
    for (int j = 0; j < grid.dims.y(); ++j) {
      for (int i = 0; i < grid.dims.x(); ++i) {
        int ri = grid.dims.y() - 1 - j;
        int rj = i;  // 90-degree rotation of the symmetric grid
        CHECK(mask.inside[grid.index(i, j, k)] == mask.inside[grid.index(ri, rj, k)]);
      }
    }
  }
  CHECK(mask.count > 0);
}

TEST_CASE("rmse closed forms and two-pass oracle") {
  GridSpec grid = GridSpec::centered(16, 4.0);
  FovMask mask = fov_mask(desk_geom(), grid);
  VoxelVolume a(grid), b(grid);

  CHECK(rmse(a, b, mask) == 0.0);

  for (std::size_t v = 0; v < b.data.size(); ++v) b.data[v] = 0.25f;
  CHECK(rmse(a, b, mask) == doctest::Approx(0.25).epsilon(1e-12));

  Pcg32 rng(5, stream_id("test_rmse"));
  for (std::size_t v = 0; v < a.data.size(); ++v) {
    a.data[v] = float(rng.uniform(0, 0.05));
    b.data[v] = float(rng.uniform(0, 0.05));
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < a.data.size(); ++v) {
    if (mask.inside[v]) {
      double d = double(a.data[v]) - double(b.data[v]);
      acc += d * d;
      ++count;
    }
  }
  CHECK(rmse(a, b, mask) == doctest::Approx(std::sqrt(acc / count)).epsilon(1e-12));
}

TEST_CASE("psnr definition and invariances") {
  GridSpec grid = GridSpec::centered(16, 4.0);
  FovMask mask = fov_mask(desk_geom(), grid);
  VoxelVolume ref(grid), vol(grid);
  Pcg32 rng(7, stream_id("test_psnr"));
  for (std::size_t v = 0; v < ref.data.size(); ++v) ref.data[v] = float(rng.uniform(0.0, 0.03));

  // rmse = peak/10 -> 20 dB: construct by shifting within the mask.
  double peak = 0.0;
  for (std::size_t v = 0; v < ref.data.size(); ++v) {
    if (mask.inside[v]) peak = std::max(peak, double(ref.data[v]));
  }
  for (std::size_t v = 0; v < ref.data.size(); ++v) {
    vol.data[v] = float(double(ref.data[v]) + peak / 10.0);
  }
  CHECK(psnr(vol, ref, mask) == doctest::Approx(20.0).epsilon(1e-5));

  // Scaling both volumes leaves PSNR unchanged.
  VoxelVolume ref2 = ref, vol2 = vol;
  for (std::size_t v = 0; v < ref.data.size(); ++v) {
    ref2.data[v] *= 3.0f;
    vol2.data[v] *= 3.0f;
  }
  CHECK(psnr(vol2, ref2, mask) == doctest::Approx(psnr(vol, ref, mask)).epsilon(1e-6));

  // Adding a constant to both: RMSE unchanged, PSNR moves only via the peak.
  VoxelVolume ref3 = ref, vol3 = vol;
  for (std::size_t v = 0; v < ref.data.size(); ++v) {
    ref3.data[v] += 0.01f;
    vol3.data[v] += 0.01f;
  }
  CHECK(rmse(vol3, ref3, mask) == doctest::Approx(rmse(vol, ref, mask)).epsilon(1e-6));
  double expected = psnr(vol, ref, mask) + 20.0 * std::log10((peak + 0.01) / peak);
  CHECK(psnr(vol3, ref3, mask) == doctest::Approx(expected).epsilon(1e-4));

  // Zero error: +infinity sentinel.
  CHECK(std::isinf(psnr(ref, ref, mask)));

  // Monotonicity: PSNR strictly decreases as RMSE grows.
  double prev_psnr = std::numeric_limits<double>::infinity();
  for (double eps : {0.001, 0.002, 0.005, 0.01, 0.02}) {
    VoxelVolume noisy = ref;
    Pcg32 nrng(11, stream_id("test_mono"));
    for (std::size_t v = 0; v < noisy.data.size(); ++v) {
      noisy.data[v] += float(eps * nrng.next_normal());
    }
    double p = psnr(noisy, ref, mask);
    CHECK(p < prev_psnr);
    prev_psnr = p;
  }
}

TEST_CASE("masked metrics ignore voxels outside the mask") {
  GridSpec grid = GridSpec::centered(16, 16.0);  // wide grid, mask clips corners
  FovMask mask = fov_mask(desk_geom(), grid);
  std::size_t outside = 0;
  VoxelVolume ref(grid), vol(grid);
  Pcg32 rng(13, stream_id("test_mask"));
  for (std::size_t v = 0; v < ref.data.size(); ++v) ref.data[v] = float(rng.uniform(0, 0.03));
  double before_rmse = rmse(vol, ref, mask);
  double before_psnr = psnr(vol, ref, mask);
  for (std::size_t v = 0; v < vol.data.size(); ++v) {
    if (!mask.inside[v]) {
      vol.data[v] = 99.0f;
      ++outside;
    }
  }
  REQUIRE(outside > 0);
  CHECK(rmse(vol, ref, mask) == before_rmse);
  CHECK(psnr(vol, ref, mask) == before_psnr);
}

TEST_CASE("dvf endpoint errors") {
  FFDMotionModel fitted;
  fitted.lattice = SpatialLattice::cover(Vec3::Constant(-60), Vec3::Constant(60),
                                         Vec3::Constant(24.0), 1, false);
  fitted.temporal = TemporalSpline::make(1, 0.0, 9.0, 4.0);

  std::vector<Vec3> probes = {Vec3(0, 0, 0), Vec3(10, -5, 20), Vec3(-30, 12, 4)};

  // Identity fit against identity truth: zero error.
  std::vector<double> zero = dvf_error(fitted, TruthMotion::zero(), probes, 4.0);
  for (double e : zero) CHECK(e == 0.0);

  // Identity fit against a pure translation of |c|: error |c| everywhere.
  Vec3 c(3.0, 0.0, -4.0);
  SpatialLattice lat = SpatialLattice::cover(Vec3::Constant(-60), Vec3::Constant(60),
                                             Vec3::Constant(24.0), 1, false);
  for (std::size_t n = 0; n < lat.nodes(); ++n) {
    std::size_t off = lat.disp_offset(0, n);
    lat.disp[off] = c.x();
    lat.disp[off + 1] = c.y();
    lat.disp[off + 2] = c.z();
  }
  std::vector<double> trace(10, 1.0);
  TruthMotion truth = TruthMotion::trace_ffd(lat, {trace});
  std::vector<double> errs = dvf_error(fitted, truth, probes, 4.0);
  double mean = 0.0;
  for (double e : errs) {
    CHECK(e == doctest::Approx(5.0).epsilon(1e-12));
    mean += e;
  }
  mean /= double(errs.size());
  CHECK(mean == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("evaluate_run on a self-consistent scene") {
  // Cloud == phantom and zero motion: volumes coincide exactly.
  GaussianCloud cloud;
  cloud.clamp = ScaleClamp{1e-6, 1e6};
  Pcg32 rng(17, stream_id("test_eval"));
  TruthBundle truth;
  truth.phantom.fov_extent = 120.0;
  truth.phantom.n_body = 0;
  for (int n = 0; n < 6; ++n) {
    double rho = rng.uniform(0.01, 0.03);
    Vec3 mu(rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-40, 40));
    Vec3 s = Vec3::Constant(std::log(rng.uniform(4.0, 9.0)));
    cloud.push_back(inverse_activate_density(rho), mu, Vec4(1, 0, 0, 0), s);
    CloudSnapshot snap = static_snapshot(cloud);
    truth.phantom.rho.assign(snap.rho.begin(), snap.rho.end());
    truth.phantom.mean.assign(snap.mean.begin(), snap.mean.end());
    truth.phantom.cov.assign(snap.cov.begin(), snap.cov.end());
  }
  truth.motion = TruthMotion::zero();

  MotionState motion;
  motion.mode = MotionMode::kDi;
  GridSpec grid = GridSpec::centered(24, 6.0);
  motion.model.lattice = SpatialLattice::cover(grid.min_corner(), grid.max_corner(),
                                               Vec3::Constant(48.0), 2, false);
  motion.model.temporal = TemporalSpline::make(2, 0.0, 7.0, 4.0);

  ScanGeometry geom = desk_geom();
  std::vector<double> samples = eval_time_samples(8, 4);
  EvalReport report = evaluate_run(cloud, motion, truth, geom, grid, samples);
  for (const EvalTimePoint& row : report.per_time) {
    CHECK(row.rmse == 0.0);
    CHECK(std::isinf(row.psnr_db));
    CHECK(row.dvf_median_mm == 0.0);
  }
  CHECK(report.mean_rmse == 0.0);
  CHECK(report.has_dvf);

  // Report means equal arithmetic means of the rows.
  double mean_rmse = 0.0;
  for (const auto& row : report.per_time) mean_rmse += row.rmse;
  CHECK(report.mean_rmse == doctest::Approx(mean_rmse / report.per_time.size()));

  // Formatting is deterministic.
  CHECK(format_report(report) == format_report(report));

  // Sample times include the midpoint.
  std::vector<double> ts = eval_time_samples(310, 10);
  bool has_mid = false;
  for (double t : ts) has_mid |= t == std::round(309.0 / 2.0);
  CHECK(has_mid);
}
