#include "cbgs/density_control.hpp"

#include <algorithm>
#include <cmath>

namespace cbgs {

void DensifyStats::accumulate(std::span<const double> center_grad_norm,
                              std::span<const std::uint8_t> live) {
  if (center_grad_norm.size() != accum.size() || live.size() != accum.size()) {
    throw ValidationError("densify statistics size mismatch");
  }
  for (std::size_t n = 0; n < accum.size(); ++n) {
    if (live[n]) {
      accum[n] += center_grad_norm[n];
      ++count[n];
    }
  }
}

void DensifyStats::reset() {
  std::fill(accum.begin(), accum.end(), 0.0);
  std::fill(count.begin(), count.end(), 0);
}

namespace {

void append_pg_copy(PerGaussianWeights* pg, std::size_t source) {
  if (!pg || pg->ranks == 0) return;
  std::size_t stride = std::size_t(pg->ranks) * PerGaussianWeights::kStride;
  std::vector<double> row(pg->values.begin() + source * stride,
                          pg->values.begin() + (source + 1) * stride);
  pg->values.insert(pg->values.end(), row.begin(), row.end());
}

void filter_pg(PerGaussianWeights* pg, const std::vector<std::uint8_t>& keep) {
  if (!pg || pg->ranks == 0) return;
  std::size_t stride = std::size_t(pg->ranks) * PerGaussianWeights::kStride;
  std::size_t out = 0;
  for (std::size_t row = 0; row < keep.size(); ++row) {
    if (!keep[row]) continue;
    for (std::size_t c = 0; c < stride; ++c) {
      pg->values[out * stride + c] = pg->values[row * stride + c];
    }
    ++out;
  }
  pg->values.resize(out * stride);
}

}  // namespace

DensifyOutcome density_control(SceneParams scene, DensifyStats& stats, const DensifyConfig& cfg,
                               double scene_extent, Pcg32& rng) {
  GaussianCloud& cloud = *scene.cloud;
  std::size_t n0 = cloud.size();
  DensifyOutcome outcome;

  double split_sigma = cfg.split_scale_fraction * scene_extent;
  double log_split = std::log(cfg.split_factor);

  // Clone/split pass. Appended kernels are not revisited this round.
  for (std::size_t n = 0; n < n0; ++n) {
    if (cloud.size() >= cfg.max_kernels) break;
    if (stats.mean(n) <= cfg.grad_threshold) continue;
    Vec3 sigma = activated_sigma(cloud.log_scale[n], cloud.clamp);
    Mat3 rot = quat_to_rotation(cloud.quat[n]);
    Vec3 draw(rng.next_normal(), rng.next_normal(), rng.next_normal());
    if (sigma.maxCoeff() > split_sigma) {
      // Split: shrink in place, mirror the children around the old mean.
      Vec3 offset = rot * sigma.cwiseProduct(draw) * 0.5;
      Vec3 s_new = cloud.log_scale[n] - Vec3::Constant(log_split);
      Vec3 mu = cloud.mean[n];
      cloud.mean[n] = mu + offset;
      cloud.log_scale[n] = s_new;
      cloud.push_back(cloud.rho_raw[n], mu - offset, cloud.quat[n], s_new);
      ++outcome.split;
    } else {
      Vec3 offset = cfg.clone_jitter * (rot * sigma.cwiseProduct(draw));
      cloud.push_back(cloud.rho_raw[n], cloud.mean[n] + offset, cloud.quat[n],
                      cloud.log_scale[n]);
      ++outcome.cloned;
    }
    append_pg_copy(scene.pg, n);
  }

  std::size_t appended = cloud.size() - n0;
  if (appended > 0) {
    scene.adam_rho->append(appended);
    scene.adam_mean->append(appended * 3);
    scene.adam_quat->append(appended * 4);
    scene.adam_scale->append(appended * 3);
    if (scene.adam_pg && scene.pg) {
      scene.adam_pg->append(appended * std::size_t(scene.pg->ranks) * PerGaussianWeights::kStride);
    }
  }

  // Prune pass over the full (possibly grown) cloud.
  double rho_max = 0.0;
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    rho_max = std::max(rho_max, activate_density(cloud.rho_raw[n]));
  }
  double prune_below = cfg.prune_rel_threshold * rho_max;
  std::vector<std::uint8_t> keep(cloud.size(), 1);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    if (activate_density(cloud.rho_raw[n]) < prune_below) {
      keep[n] = 0;
      ++outcome.pruned;
    }
  }
  if (outcome.pruned > 0) {
    cloud.filter(keep);
    filter_pg(scene.pg, keep);
    scene.adam_rho->filter(keep, 1);
    scene.adam_mean->filter(keep, 3);
    scene.adam_quat->filter(keep, 4);
    scene.adam_scale->filter(keep, 3);
    if (scene.adam_pg && scene.pg) {
      scene.adam_pg->filter(keep, std::size_t(scene.pg->ranks) * PerGaussianWeights::kStride);
    }
  }

  stats.resize(cloud.size());
  stats.reset();
  return outcome;
}

}  // namespace cbgs
