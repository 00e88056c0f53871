#include "cbgs/phantom.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cbgs/rng.hpp"

namespace cbgs {

void ProjectionSet::validate() const {
  if (int(views.size()) != geom.n_views || views.size() != time_index.size()) {
    throw ValidationError("projection set view count inconsistent with geometry");
  }
  for (int t : time_index) {
    if (t < 0 || t >= n_t) throw ValidationError("view time index outside [0, n_t)");
  }
  for (const DetectorImage& img : views) {
    if (img.rows != geom.detector_rows || img.cols != geom.detector_cols) {
      throw ValidationError("view dimensions do not match the geometry");
    }
  }
}

BlobPhantom make_blob_phantom(int n_features, double fov_extent, std::uint64_t seed) {
  if (n_features < 1) throw ValidationError("need at least one feature blob");
  Pcg32 rng(seed, stream_id("phantom"));
  BlobPhantom ph;
  ph.fov_extent = fov_extent;
  double r_max = 0.35 * fov_extent;

  auto push = [&ph](double rho, const Vec3& mu, const Vec3& sigma, const Vec4& quat) {
    Mat3 rot = quat_to_rotation(quat);
    ph.rho.push_back(rho);
    ph.mean.push_back(mu);
    ph.cov.push_back(rot * sigma.array().square().matrix().asDiagonal() * rot.transpose());
  };

  // Body outline: one broad torso ellipsoid plus a softer halo.
  push(0.008, Vec3(0, 0, 0), Vec3(0.30, 0.24, 0.34) * fov_extent, Vec4(1, 0, 0, 0));
  push(0.004, Vec3(0.05 * fov_extent, -0.04 * fov_extent, 0),
       Vec3(0.36, 0.30, 0.40) * fov_extent, Vec4(1, 0, 0, 0));
  ph.n_body = 2;

  for (int b = 0; b < n_features; ++b) {
    Vec3 mu(rng.uniform(-r_max, r_max), rng.uniform(-r_max, r_max), rng.uniform(-r_max, r_max));
    Vec3 sigma(rng.uniform(6.0, 16.0), rng.uniform(6.0, 16.0), rng.uniform(6.0, 16.0));
    Vec4 quat(rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal());
    if (quat.norm() < 1e-6) quat = Vec4(1, 0, 0, 0);
    double rho = rng.uniform(0.010, 0.025);
    push(rho, mu, sigma, quat);
  }
  return ph;
}

std::vector<double> breathing_trace(int n_cycles, int points_per_cycle, double amp_min,
                                    double amp_max, double drift, std::uint64_t seed) {
  if (n_cycles < 1) throw ValidationError("need at least one breathing cycle");
  if (points_per_cycle < 1) throw ValidationError("need at least one point per cycle");
  Pcg32 rng(seed, stream_id("trace"));
  int n_t = n_cycles * points_per_cycle;
  std::vector<double> a(n_t, 0.0);
  for (int c = 0; c < n_cycles; ++c) {
    double scale = rng.uniform(amp_min, amp_max);
    for (int p = 0; p < points_per_cycle; ++p) {
      int t = c * points_per_cycle + p;
      double phase = double(p) / double(points_per_cycle);
      a[t] = scale * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * phase)) +
             drift * double(t) / double(n_t);
    }
  }
  return a;
}

TruthMotion TruthMotion::zero() { return TruthMotion(); }

TruthMotion TruthMotion::spline_ffd(FFDMotionModel model) {
  model.validate();
  TruthMotion m;
  m.kind_ = Kind::kSplineFfd;
  m.model_ = std::move(model);
  return m;
}

TruthMotion TruthMotion::trace_ffd(SpatialLattice lattice,
                                   std::vector<std::vector<double>> traces) {
  if (int(traces.size()) != lattice.ranks) {
    throw ValidationError("one trace per lattice rank required");
  }
  for (const auto& tr : traces) {
    if (tr.empty() || tr.size() != traces.front().size()) {
      throw ValidationError("traces must be nonempty and equally long");
    }
  }
  TruthMotion m;
  m.kind_ = Kind::kTraceFfd;
  m.trace_lattice_ = std::move(lattice);
  m.traces_ = std::move(traces);
  return m;
}

TruthMotion TruthMotion::per_blob(std::vector<BlobTrajectory> trajectories,
                                  std::vector<double> trace) {
  if (trace.empty()) throw ValidationError("per-blob motion needs a trace");
  TruthMotion m;
  m.kind_ = Kind::kPerBlob;
  m.trajectories_ = std::move(trajectories);
  m.traces_.push_back(std::move(trace));
  return m;
}

int TruthMotion::n_t() const {
  switch (kind_) {
    case Kind::kZero: return 0;  // time-invariant
    case Kind::kSplineFfd: return 0;
    case Kind::kTraceFfd:
    case Kind::kPerBlob: return int(traces_.front().size());
  }
  return 0;
}

const SpatialLattice& TruthMotion::lattice() const {
  return kind_ == Kind::kSplineFfd ? model_.lattice : trace_lattice_;
}

namespace {

double sample_trace(const std::vector<double>& trace, double t) {
  if (trace.empty()) return 0.0;
  double tc = std::clamp(t, 0.0, double(trace.size() - 1));
  int lo = int(std::floor(tc));
  int hi = std::min(lo + 1, int(trace.size()) - 1);
  double frac = tc - double(lo);
  return (1.0 - frac) * trace[lo] + frac * trace[hi];
}

}  // namespace

std::vector<double> TruthMotion::weights_at(double t) const {
  switch (kind_) {
    case Kind::kZero: return {};
    case Kind::kSplineFfd: return temporal_weights(model_.temporal, t);
    case Kind::kTraceFfd: {
      std::vector<double> w(traces_.size());
      for (std::size_t r = 0; r < traces_.size(); ++r) w[r] = sample_trace(traces_[r], t);
      return w;
    }
    case Kind::kPerBlob: return {sample_trace(traces_.front(), t)};
  }
  return {};
}

Vec3 TruthMotion::displace(const Vec3& x, double t) const {
  switch (kind_) {
    case Kind::kZero: return x;
    case Kind::kSplineFfd: return displacement(model_, x, t);
    case Kind::kTraceFfd: {
      LatticeStencil st = lattice_stencil(trace_lattice_, x);
      Vec3 d = x;
      std::vector<double> w = weights_at(t);
      for (int r = 0; r < trace_lattice_.ranks; ++r) {
        d += w[r] * interp_disp(trace_lattice_, st, r);
      }
      return d;
    }
    case Kind::kPerBlob: {
      std::size_t nearest = 0;
      double best = 1e300;
      for (std::size_t b = 0; b < anchors_.size(); ++b) {
        double d2 = (anchors_[b] - x).squaredNorm();
        if (d2 < best) {
          best = d2;
          nearest = b;
        }
      }
      return displace_blob(nearest, x, t);
    }
  }
  return x;
}

Mat3 TruthMotion::jacobian(const Vec3& x, double t) const {
  switch (kind_) {
    case Kind::kZero: return Mat3::Identity();
    case Kind::kSplineFfd: return motion_jacobian(model_, x, t);
    case Kind::kTraceFfd: {
      LatticeStencil st = lattice_stencil(trace_lattice_, x);
      Mat3 k = Mat3::Identity();
      std::vector<double> w = weights_at(t);
      for (int r = 0; r < trace_lattice_.ranks; ++r) {
        k += w[r] * interp_disp_gradient(trace_lattice_, st, r);
      }
      return k;
    }
    case Kind::kPerBlob: {
      std::size_t nearest = 0;
      double best = 1e300;
      for (std::size_t b = 0; b < anchors_.size(); ++b) {
        double d2 = (anchors_[b] - x).squaredNorm();
        if (d2 < best) {
          best = d2;
          nearest = b;
        }
      }
      return jacobian_blob(nearest, x, t);
    }
  }
  return Mat3::Identity();
}

Vec3 TruthMotion::displace_blob(std::size_t blob, const Vec3& x, double t) const {
  if (kind_ != Kind::kPerBlob) return displace(x, t);
  const BlobTrajectory& tr = trajectories_.at(blob);
  const Vec3& anchor = anchors_.at(blob);
  double a = sample_trace(traces_.front(), t);
  Mat3 rot = Eigen::AngleAxisd(a * tr.rot_amplitude, tr.rot_axis.normalized()).toRotationMatrix();
  return anchor + rot * (x - anchor) + a * tr.translation;
}

Mat3 TruthMotion::jacobian_blob(std::size_t blob, const Vec3& x, double t) const {
  if (kind_ != Kind::kPerBlob) return jacobian(x, t);
  const BlobTrajectory& tr = trajectories_.at(blob);
  double a = sample_trace(traces_.front(), t);
  return Eigen::AngleAxisd(a * tr.rot_amplitude, tr.rot_axis.normalized()).toRotationMatrix();
}

BlobPhantom phantom_at(const BlobPhantom& phantom, const TruthMotion& motion, double t) {
  BlobPhantom out = phantom;
  for (std::size_t b = 0; b < phantom.size(); ++b) {
    Vec3 mu = phantom.mean[b];
    Mat3 k = motion.kind() == TruthMotion::Kind::kPerBlob ? motion.jacobian_blob(b, mu, t)
                                                          : motion.jacobian(mu, t);
    out.mean[b] = motion.kind() == TruthMotion::Kind::kPerBlob ? motion.displace_blob(b, mu, t)
                                                               : motion.displace(mu, t);
    out.cov[b] = k * phantom.cov[b] * k.transpose();
  }
  return out;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct BlobRay {
  Mat3 inv;       // Sigma^-1
  Vec3 inv_v;     // Sigma^-1 (source - mu)
  double v_iv;    // (source - mu)^T Sigma^-1 (source - mu)
  double rho;
};

inline double blob_line_integral(const BlobRay& b, const Vec3& dir) {
  Vec3 ad = b.inv * dir;
  double daq = dir.dot(ad);
  double dav = dir.dot(b.inv_v);
  double expo = -0.5 * (b.v_iv - dav * dav / daq);
  return b.rho * std::sqrt(kTwoPi / daq) * std::exp(expo);
}

std::vector<BlobRay> prepare_blobs(const KernelView& blobs, const Vec3& source) {
  std::vector<BlobRay> prep(blobs.size());
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    prep[b].inv = blobs.cov[b].inverse();
    Vec3 v = source - blobs.mean[b];
    prep[b].inv_v = prep[b].inv * v;
    prep[b].v_iv = v.dot(prep[b].inv_v);
    prep[b].rho = blobs.rho[b];
  }
  return prep;
}

}  // namespace

ImageBuffer analytic_project_buffer(const KernelView& blobs, const ViewPose& pose,
                                    const ScanGeometry& geom, bool parallel) {
  ImageBuffer img(geom.detector_rows, geom.detector_cols);
  if (blobs.size() == 0) return img;
  Vec3 source = pose.source_world();
  std::vector<BlobRay> prep = prepare_blobs(blobs, source);

#pragma omp parallel for schedule(static) if (parallel)
  for (int row = 0; row < geom.detector_rows; ++row) {
    for (int col = 0; col < geom.detector_cols; ++col) {
      Vec3 pixel = detector_pixel_world(pose, geom, double(col), double(row));
      Vec3 dir = (pixel - source).normalized();
      double acc = 0.0;
      for (const BlobRay& b : prep) acc += blob_line_integral(b, dir);
      img.at(row, col) = acc;
    }
  }
  return img;
}

ImageBuffer analytic_project_reference(const KernelView& blobs, const ViewPose& pose,
                                       const ScanGeometry& geom) {
  return analytic_project_buffer(blobs, pose, geom, false);
}

DetectorImage analytic_project(const KernelView& blobs, const ViewPose& pose,
                               const ScanGeometry& geom, bool parallel) {
  return analytic_project_buffer(blobs, pose, geom, parallel).to_image();
}

DetectorImage add_noise(const DetectorImage& image, const NoiseSpec& noise, int view_index) {
  if (!(noise.lambda > 0.0)) throw ValidationError("photon fluence must be positive");
  if (noise.sigma < 0.0) throw ValidationError("electronic noise sigma must be non-negative");
  Pcg32 rng(noise.seed, stream_id("noise", std::uint64_t(view_index)));
  DetectorImage out(image.rows, image.cols);
  for (std::size_t p = 0; p < image.data.size(); ++p) {
    double line_integral = std::max(0.0, double(image.data[p]));
    double mean_counts = noise.lambda * std::exp(-line_integral);
    double counts = double(rng.next_poisson(mean_counts));
    if (noise.sigma > 0.0) counts += noise.sigma * rng.next_normal();
    counts = std::max(counts, 1.0);
    out.data[p] = float(-std::log(counts / noise.lambda));
  }
  return out;
}

SimResult make_dataset(const SimSpec& spec, bool parallel) {
  int n_views = spec.geom.n_views;
  int motion_nt = spec.motion.n_t();
  if (motion_nt > 0 && motion_nt < n_views) {
    std::ostringstream err;
    err << "motion trace covers " << motion_nt << " time points but the scan has " << n_views
        << " views";
    throw ValidationError(err.str());
  }

  SimResult result;
  result.projections.geom = spec.geom;
  result.projections.n_t = n_views;
  result.projections.seed = spec.seed;
  result.projections.views.resize(n_views);
  result.projections.time_index.resize(n_views);
  if (spec.apply_noise) {
    result.projections.noise.applied = true;
    result.projections.noise.lambda = spec.noise.lambda;
    result.projections.noise.sigma = spec.noise.sigma;
  }

  for (int i = 0; i < n_views; ++i) {
    ViewPose pose = view_pose(spec.geom, i);
    BlobPhantom snap = phantom_at(spec.phantom, spec.motion, double(i));
    DetectorImage img = analytic_project(snap.view(), pose, spec.geom, parallel);
    if (spec.apply_noise) img = add_noise(img, spec.noise, i);
    result.projections.views[i] = std::move(img);
    result.projections.time_index[i] = i;
  }

  result.truth.phantom = spec.phantom;
  result.truth.motion = spec.motion;
  result.truth.noise = spec.noise;
  result.truth.noise_applied = spec.apply_noise;
  result.truth.seed = spec.seed;
  return result;
}

namespace {

// Separable 3-tap [1,2,1]/4 smoothing of per-node vectors, repeated, then
// rescaled to the requested peak amplitude per component weighting.
void smooth_and_scale(SpatialLattice& lat, int rank, Pcg32& rng, const Vec3& component_weight,
                      double peak_mm) {
  std::size_t nodes = lat.nodes();
  std::vector<Vec3> field(nodes);
  for (std::size_t n = 0; n < nodes; ++n) {
    field[n] = Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
  }
  auto idx = [&lat](int i, int j, int k) { return lat.node_index(i, j, k); };
  std::vector<Vec3> tmp(nodes);
  for (int pass = 0; pass < 3; ++pass) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int k = 0; k < lat.dims.z(); ++k) {
        for (int j = 0; j < lat.dims.y(); ++j) {
          for (int i = 0; i < lat.dims.x(); ++i) {
            Vec3i lo(i, j, k), hi(i, j, k);
            lo[axis] = std::max(0, lo[axis] - 1);
            hi[axis] = std::min(lat.dims[axis] - 1, hi[axis] + 1);
            tmp[idx(i, j, k)] = 0.25 * (field[idx(lo.x(), lo.y(), lo.z())] +
                                        2.0 * field[idx(i, j, k)] +
                                        field[idx(hi.x(), hi.y(), hi.z())]);
          }
        }
      }
      std::swap(field, tmp);
    }
  }
  double max_norm = 1e-12;
  for (std::size_t n = 0; n < nodes; ++n) {
    field[n] = field[n].cwiseProduct(component_weight);
    max_norm = std::max(max_norm, field[n].norm());
  }
  double gain = peak_mm / max_norm;
  for (std::size_t n = 0; n < nodes; ++n) {
    Vec3 d = gain * field[n];
    std::size_t off = lat.disp_offset(rank, n);
    lat.disp[off + 0] = d.x();
    lat.disp[off + 1] = d.y();
    lat.disp[off + 2] = d.z();
  }
}

}  // namespace

ScanGeometry full_scan_geometry() {
  return make_circular_geometry(1000.0, 1536.0, 310, DetectorSpec{512, 512, 0.8}, 116.0);
}

SimSpec desk_fixture(std::uint64_t seed, bool apply_noise, bool model_mismatch) {
  SimSpec spec;
  spec.seed = seed;
  spec.geom = make_circular_geometry(1000.0, 1536.0, 60, DetectorSpec{128, 128, 1.6}, 58.0);
  spec.phantom = make_blob_phantom(18, 200.0, seed);
  spec.noise = NoiseSpec{1e8, 4.0, seed};
  spec.apply_noise = apply_noise;

  constexpr int kCycles = 4;
  constexpr int kPointsPerCycle = 15;
  std::vector<double> primary =
      breathing_trace(kCycles, kPointsPerCycle, 0.8, 1.2, 0.15, seed);

  if (model_mismatch) {
    Pcg32 rng(seed, stream_id("mismatch"));
    std::vector<TruthMotion::BlobTrajectory> traj(spec.phantom.size());
    for (auto& tr : traj) {
      Vec3 dir(rng.next_normal(), rng.next_normal(), 2.0 * rng.next_normal());
      tr.translation = dir.normalized() * rng.uniform(4.0, 10.0);
      tr.rot_axis = Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
      if (tr.rot_axis.norm() < 1e-6) tr.rot_axis = Vec3::UnitZ();
      tr.rot_amplitude = rng.uniform(-0.12, 0.12);
    }
    TruthMotion motion = TruthMotion::per_blob(std::move(traj), primary);
    motion.set_blob_anchors(spec.phantom.mean);
    spec.motion = motion;
    return spec;
  }

  // Quarter-phase secondary trace gives the motion genuine rank 2
  // (hysteresis), with its own cycle-amplitude variability.
  Pcg32 rng2(seed, stream_id("trace2"));
  std::vector<double> secondary(primary.size(), 0.0);
  for (int c = 0; c < kCycles; ++c) {
    double scale = rng2.uniform(0.8, 1.2);
    for (int p = 0; p < kPointsPerCycle; ++p) {
      double phase = double(p) / double(kPointsPerCycle);
      secondary[c * kPointsPerCycle + p] =
          0.5 * scale * std::sin(2.0 * std::numbers::pi * phase);
    }
  }

  Vec3 box(110.0, 110.0, 110.0);
  SpatialLattice lattice =
      SpatialLattice::cover(-box, box, Vec3::Constant(32.0), 2, /*attribute_channels=*/false);
  Pcg32 rng(seed, stream_id("truth_field"));
  smooth_and_scale(lattice, 0, rng, Vec3(0.45, 0.45, 1.0), 12.0);
  smooth_and_scale(lattice, 1, rng, Vec3(1.0, 1.0, 0.5), 4.0);

  spec.motion = TruthMotion::trace_ffd(std::move(lattice), {primary, secondary});
  return spec;
}

}  // namespace cbgs
