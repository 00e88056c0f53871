#include "cbgs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cbgs {

FovMask fov_mask(const ScanGeometry& geom, const GridSpec& grid) {
  if (!grid.valid()) throw ValidationError("invalid grid for FOV mask");
  if (!(geom.sdd > 0.0) || !(geom.sid > 0.0)) throw ValidationError("degenerate geometry");
  FovMask mask;
  mask.grid = grid;
  mask.radius_mm = geom.fov_radius();
  mask.inside.assign(grid.voxel_count(), 0);
  double r2 = mask.radius_mm * mask.radius_mm;
  for (int k = 0; k < grid.dims.z(); ++k) {
    for (int j = 0; j < grid.dims.y(); ++j) {
      for (int i = 0; i < grid.dims.x(); ++i) {
        Vec3 x = grid.voxel_center(i, j, k);
        if (x.x() * x.x() + x.y() * x.y() <= r2) {
          mask.inside[grid.index(i, j, k)] = 1;
          ++mask.count;
        }
      }
    }
  }
  if (mask.count == 0) throw ValidationError("FOV mask is empty");
  return mask;
}

namespace {

void check_same_grid(const VoxelVolume& a, const VoxelVolume& b, const FovMask& mask) {
  if (a.grid.dims != b.grid.dims || a.grid.dims != mask.grid.dims) {
    throw ValidationError("volume grids do not match");
  }
  if (mask.count == 0) throw ValidationError("empty mask");
}

}  // namespace

double rmse(const VoxelVolume& volume, const VoxelVolume& reference, const FovMask& mask) {
  check_same_grid(volume, reference, mask);
  double acc = 0.0;
  for (std::size_t v = 0; v < mask.inside.size(); ++v) {
    if (!mask.inside[v]) continue;
    double d = double(volume.data[v]) - double(reference.data[v]);
    acc += d * d;
  }
  return std::sqrt(acc / double(mask.count));
}

double psnr(const VoxelVolume& volume, const VoxelVolume& reference, const FovMask& mask) {
  check_same_grid(volume, reference, mask);
  double peak = 0.0;
  for (std::size_t v = 0; v < mask.inside.size(); ++v) {
    if (mask.inside[v]) peak = std::max(peak, double(reference.data[v]));
  }
  if (!(peak > 0.0)) throw ValidationError("reference volume has no positive peak within the mask");
  double err = rmse(volume, reference, mask);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / err);
}

std::vector<double> dvf_error(const FFDMotionModel& fitted, const TruthMotion& truth,
                              std::span<const Vec3> probes, double t) {
  std::vector<double> errors(probes.size());
  for (std::size_t p = 0; p < probes.size(); ++p) {
    Vec3 fit = displacement(fitted, probes[p], t);
    Vec3 ref = truth.displace(probes[p], t);
    errors[p] = (fit - ref).norm();
  }
  return errors;
}

std::vector<double> eval_time_samples(int n_t, int n_samples) {
  std::vector<double> samples;
  if (n_t <= 1 || n_samples <= 1) {
    samples.push_back(0.0);
    return samples;
  }
  n_samples = std::min(n_samples, n_t);
  for (int s = 0; s < n_samples; ++s) {
    samples.push_back(std::round(double(s) * double(n_t - 1) / double(n_samples - 1)));
  }
  double mid = std::round(0.5 * double(n_t - 1));
  if (std::find(samples.begin(), samples.end(), mid) == samples.end()) {
    samples.push_back(mid);
    std::sort(samples.begin(), samples.end());
  }
  return samples;
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

EvalReport evaluate_run(const GaussianCloud& cloud, const MotionState& motion,
                        const TruthBundle& truth, const ScanGeometry& geom, const GridSpec& grid,
                        const std::vector<double>& time_samples, bool parallel) {
  if (time_samples.empty()) throw ValidationError("need at least one evaluation time");
  EvalReport report;
  FovMask mask = fov_mask(geom, grid);
  report.mask_radius_mm = mask.radius_mm;
  report.has_dvf = motion.mode != MotionMode::kPerGaussian;

  std::vector<Vec3> probes = truth.phantom.feature_centers();
  std::vector<double> all_dvf;

  for (double t : time_samples) {
    EvalTimePoint row;
    row.time = t;
    VoxelVolume truth_vol = truth.volume_at(t, grid, parallel);
    CloudSnapshot snap = warp(cloud, motion, t, parallel);
    VoxelVolume fit_vol = rasterize_kernels(snap.view(), grid, parallel);
    row.rmse = rmse(fit_vol, truth_vol, mask);
    row.psnr_db = psnr(fit_vol, truth_vol, mask);
    if (report.has_dvf && !probes.empty()) {
      std::vector<double> errs = dvf_error(motion.model, truth.motion, probes, t);
      double mean = 0.0;
      for (double e : errs) mean += e;
      row.dvf_mean_mm = mean / double(errs.size());
      row.dvf_median_mm = median(errs);
      all_dvf.insert(all_dvf.end(), errs.begin(), errs.end());
    }
    report.per_time.push_back(row);
  }

  for (const EvalTimePoint& row : report.per_time) {
    report.mean_psnr_db += row.psnr_db;
    report.mean_rmse += row.rmse;
  }
  report.mean_psnr_db /= double(report.per_time.size());
  report.mean_rmse /= double(report.per_time.size());
  if (!all_dvf.empty()) {
    double mean = 0.0;
    for (double e : all_dvf) mean += e;
    report.dvf_mean_mm = mean / double(all_dvf.size());
    report.dvf_median_mm = median(all_dvf);
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "# evaluation report\n";
  os << "# peak convention: " << report.peak_convention << "\n";
  os << "# mask radius (mm): " << report.mask_radius_mm << "\n";
  os << "# columns: time psnr_db rmse_mm^-1";
  if (report.has_dvf) os << " dvf_mean_mm dvf_median_mm";
  os << "\n";
  for (const EvalTimePoint& row : report.per_time) {
    os << row.time << " " << row.psnr_db << " " << row.rmse;
    if (report.has_dvf) os << " " << row.dvf_mean_mm << " " << row.dvf_median_mm;
    os << "\n";
  }
  os << "mean_psnr_db " << report.mean_psnr_db << "\n";
  os << "mean_rmse " << report.mean_rmse << "\n";
  if (report.has_dvf) {
    os << "dvf_mean_mm " << report.dvf_mean_mm << "\n";
    os << "dvf_median_mm " << report.dvf_median_mm << "\n";
  }
  return os.str();
}

}  // namespace cbgs
