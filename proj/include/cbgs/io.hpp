#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cbgs/gaussian_cloud.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/projection_set.hpp"
#include "cbgs/recon_engine.hpp"
#include "cbgs/warp.hpp"

namespace cbgs {

std::uint32_t crc32(const void* data, std::size_t size);

/// Projection sets live in a directory: projections.json plus one raw
/// little-endian float32 row-major image per view (checksummed).
void write_projection_set(const std::filesystem::path& dir, const ProjectionSet& set);
ProjectionSet read_projection_set(const std::filesystem::path& dir);

/// Volumes are a JSON sidecar (dims, spacing, origin, units) plus a raw
/// little-endian float32 payload in x-fastest order.
void write_volume(const std::filesystem::path& stem, const VoxelVolume& volume);
VoxelVolume read_volume(const std::filesystem::path& stem);

/// Versioned binary cloud checkpoint: header then 11 doubles per kernel
/// (rho_raw, mean, quat, log_scale) in little-endian order.
void write_cloud_checkpoint(const std::filesystem::path& file, const GaussianCloud& cloud);
GaussianCloud read_cloud_checkpoint(const std::filesystem::path& file);

/// Versioned binary motion checkpoint: mode, lattice spec and payloads,
/// temporal spec and controls, per-Gaussian weights when present.
void write_motion_checkpoint(const std::filesystem::path& file, const MotionState& motion);
MotionState read_motion_checkpoint(const std::filesystem::path& file);

/// Ground-truth bundle (phantom, motion, noise provenance) as JSON.
void write_truth_bundle(const std::filesystem::path& file, const TruthBundle& truth);
TruthBundle read_truth_bundle(const std::filesystem::path& file);

/// Parse a JSON run-config file into a TrainConfig; unknown keys are
/// rejected. Key names match the CLI flags (kebab-case).
TrainConfig load_train_config(const std::filesystem::path& file, const TrainConfig& defaults);

/// All recognized config keys, in declaration order.
std::vector<std::string> train_config_keys();

/// Apply textual key/value overrides (e.g. from CLI flags) on top of a base
/// config. Values are parsed as JSON scalars; bare words count as strings.
TrainConfig apply_config_overrides(const TrainConfig& base,
                                   const std::vector<std::pair<std::string, std::string>>& kv);

/// Serialize a config (used to record the resolved configuration of a run).
std::string config_to_json(const TrainConfig& config);

/// The documented defaults as a config file template.
std::string default_config_json();

/// 8-bit portable graymap of an image window [lo, hi].
void write_pgm(const std::filesystem::path& file, const DetectorImage& image, double lo, double hi);

void write_text_file(const std::filesystem::path& file, const std::string& content);

}  // namespace cbgs
