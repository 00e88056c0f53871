#include "cbgs/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cbgs {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

using nlohmann::json;

namespace {

constexpr std::uint32_t kProjectionVersion = 1;
constexpr std::uint32_t kVolumeVersion = 1;
constexpr std::uint32_t kCloudVersion = 1;
constexpr std::uint32_t kMotionVersion = 1;
constexpr std::uint32_t kTruthVersion = 1;

constexpr char kCloudMagic[8] = {'C', 'B', 'G', 'S', 'C', 'L', 'D', '\0'};
constexpr char kMotionMagic[8] = {'C', 'B', 'G', 'S', 'M', 'O', 'T', '\0'};

std::ofstream open_out(const std::filesystem::path& file, std::ios::openmode mode) {
  std::ofstream os(file, mode);
  if (!os) throw IoError("cannot open for writing: " + file.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& file, std::ios::openmode mode) {
  std::ifstream is(file, mode);
  if (!is) throw IoError("cannot open for reading: " + file.string());
  return is;
}

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("unexpected end of file");
  return value;
}

void write_doubles(std::ostream& os, std::span<const double> values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           std::streamsize(values.size() * sizeof(double)));
}

void read_doubles(std::istream& is, std::span<double> values) {
  is.read(reinterpret_cast<char*>(values.data()),
          std::streamsize(values.size() * sizeof(double)));
  if (!is) throw IoError("unexpected end of file");
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }
json mat3_json(const Mat3& m) {
  json j = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) j.push_back(m(r, c));
  return j;
}
Mat3 mat3_from(const json& j) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r * 3 + c);
  return m;
}

json load_json(const std::filesystem::path& file) {
  std::ifstream is = open_in(file, std::ios::in);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + file.string() + ": " + e.what());
  }
  return j;
}

void save_json(const std::filesystem::path& file, const json& j) {
  std::ofstream os = open_out(file, std::ios::out);
  os << j.dump(2) << "\n";
  if (!os) throw IoError("write failed: " + file.string());
}

std::string view_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%04d.raw", index);
  return buf;
}

void write_float_raw(const std::filesystem::path& file, std::span<const float> data) {
  std::ofstream os = open_out(file, std::ios::binary);
  os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * 4));
  if (!os) throw IoError("write failed: " + file.string());
}

std::vector<float> read_float_raw(const std::filesystem::path& file, std::size_t expected) {
  std::ifstream is = open_in(file, std::ios::binary);
  std::vector<float> data(expected);
  is.read(reinterpret_cast<char*>(data.data()), std::streamsize(expected * 4));
  if (!is || std::size_t(is.gcount()) != expected * 4) {
    throw IoError("raw payload truncated: " + file.string());
  }
  char extra;
  if (is.read(&extra, 1)) throw IoError("raw payload longer than expected: " + file.string());
  return data;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t size) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) crc = table[(crc ^ bytes[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void write_projection_set(const std::filesystem::path& dir, const ProjectionSet& set) {
  set.validate();
  std::filesystem::create_directories(dir);
  json meta;
  meta["format"] = "cbgs-projections";
  meta["version"] = kProjectionVersion;
  meta["geometry"] = {
      {"sid", set.geom.sid},
      {"sdd", set.geom.sdd},
      {"n_views", set.geom.n_views},
      {"detector_rows", set.geom.detector_rows},
      {"detector_cols", set.geom.detector_cols},
      {"pixel_pitch", set.geom.pixel_pitch},
      {"detector_offset_u", set.geom.detector_offset_u},
      {"conventions",
       {{"rotation", "gantry angle increases counter-clockwise about +z"},
        {"offset_u", "principal point shifted by +offset_u/pixel_pitch pixels in u"}}},
  };
  meta["n_t"] = set.n_t;
  meta["seed"] = set.seed;
  meta["noise"] = {{"applied", set.noise.applied},
                   {"lambda", set.noise.lambda},
                   {"sigma", set.noise.sigma}};
  json views = json::array();
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const DetectorImage& img = set.views[i];
    std::string name = view_file_name(int(i));
    write_float_raw(dir / name, img.data);
    views.push_back({{"index", i},
                     {"angle", set.geom.angles[i]},
                     {"time_index", set.time_index[i]},
                     {"file", name},
                     {"crc32", crc32(img.data.data(), img.data.size() * 4)}});
  }
  meta["views"] = views;
  save_json(dir / "projections.json", meta);
}

ProjectionSet read_projection_set(const std::filesystem::path& dir) {
  json meta = load_json(dir / "projections.json");
  if (meta.value("format", "") != "cbgs-projections") {
    throw IoError("not a projection set: " + dir.string());
  }
  if (meta.at("version").get<std::uint32_t>() != kProjectionVersion) {
    throw IoError("unsupported projection set version");
  }
  const json& g = meta.at("geometry");
  ProjectionSet set;
  set.geom = make_circular_geometry(
      g.at("sid"), g.at("sdd"), g.at("n_views"),
      DetectorSpec{g.at("detector_rows"), g.at("detector_cols"), g.at("pixel_pitch")},
      g.at("detector_offset_u"));
  set.n_t = meta.at("n_t");
  set.seed = meta.at("seed");
  set.noise.applied = meta.at("noise").at("applied");
  set.noise.lambda = meta.at("noise").at("lambda");
  set.noise.sigma = meta.at("noise").at("sigma");

  const json& views = meta.at("views");
  if (int(views.size()) != set.geom.n_views) {
    throw IoError("metadata view count does not match the geometry");
  }
  set.views.resize(views.size());
  set.time_index.resize(views.size());
  std::size_t pixels = std::size_t(set.geom.detector_rows) * set.geom.detector_cols;
  for (const json& v : views) {
    int index = v.at("index");
    DetectorImage img(set.geom.detector_rows, set.geom.detector_cols);
    img.data = read_float_raw(dir / v.at("file").get<std::string>(), pixels);
    std::uint32_t crc = crc32(img.data.data(), img.data.size() * 4);
    if (crc != v.at("crc32").get<std::uint32_t>()) {
      throw IoError("checksum mismatch for view " + std::to_string(index));
    }
    set.views[index] = std::move(img);
    set.time_index[index] = v.at("time_index");
  }
  set.validate();
  return set;
}

void write_volume(const std::filesystem::path& stem, const VoxelVolume& volume) {
  json meta;
  meta["format"] = "cbgs-volume";
  meta["version"] = kVolumeVersion;
  meta["dims"] = {volume.grid.dims.x(), volume.grid.dims.y(), volume.grid.dims.z()};
  meta["spacing"] = volume.grid.spacing;
  meta["origin"] = vec3_json(volume.grid.origin);
  meta["units"] = "mm^-1";
  meta["order"] = "x-fastest";
  meta["crc32"] = crc32(volume.data.data(), volume.data.size() * 4);
  save_json(std::filesystem::path(stem.string() + ".json"), meta);
  write_float_raw(std::filesystem::path(stem.string() + ".raw"), volume.data);
}

VoxelVolume read_volume(const std::filesystem::path& stem) {
  json meta = load_json(std::filesystem::path(stem.string() + ".json"));
  if (meta.value("format", "") != "cbgs-volume") throw IoError("not a volume: " + stem.string());
  GridSpec grid;
  grid.dims = Vec3i(meta.at("dims").at(0), meta.at("dims").at(1), meta.at("dims").at(2));
  grid.spacing = meta.at("spacing");
  grid.origin = vec3_from(meta.at("origin"));
  VoxelVolume volume(grid);
  volume.data = read_float_raw(std::filesystem::path(stem.string() + ".raw"), grid.voxel_count());
  if (crc32(volume.data.data(), volume.data.size() * 4) != meta.at("crc32").get<std::uint32_t>()) {
    throw IoError("volume checksum mismatch: " + stem.string());
  }
  return volume;
}

void write_cloud_checkpoint(const std::filesystem::path& file, const GaussianCloud& cloud) {
  std::ofstream os = open_out(file, std::ios::binary);
  os.write(kCloudMagic, 8);
  write_pod(os, kCloudVersion);
  write_pod(os, std::uint64_t(cloud.size()));
  write_pod(os, cloud.clamp.min_sigma);
  write_pod(os, cloud.clamp.max_sigma);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    write_pod(os, cloud.rho_raw[n]);
    write_doubles(os, std::span<const double>(cloud.mean[n].data(), 3));
    write_doubles(os, std::span<const double>(cloud.quat[n].data(), 4));
    write_doubles(os, std::span<const double>(cloud.log_scale[n].data(), 3));
  }
  if (!os) throw IoError("write failed: " + file.string());
}

GaussianCloud read_cloud_checkpoint(const std::filesystem::path& file) {
  std::ifstream is = open_in(file, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCloudMagic, 8) != 0) {
    throw IoError("not a cloud checkpoint: " + file.string());
  }
  if (read_pod<std::uint32_t>(is) != kCloudVersion) throw IoError("unsupported cloud version");
  std::uint64_t count = read_pod<std::uint64_t>(is);
  GaussianCloud cloud;
  cloud.clamp.min_sigma = read_pod<double>(is);
  cloud.clamp.max_sigma = read_pod<double>(is);
  cloud.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    double raw = read_pod<double>(is);
    Vec3 mu, s;
    Vec4 q;
    read_doubles(is, std::span<double>(mu.data(), 3));
    read_doubles(is, std::span<double>(q.data(), 4));
    read_doubles(is, std::span<double>(s.data(), 3));
    cloud.push_back(raw, mu, q, s);
  }
  return cloud;
}

namespace {

void write_lattice(std::ostream& os, const SpatialLattice& lat) {
  write_pod(os, std::int32_t(lat.dims.x()));
  write_pod(os, std::int32_t(lat.dims.y()));
  write_pod(os, std::int32_t(lat.dims.z()));
  write_doubles(os, std::span<const double>(lat.spacing.data(), 3));
  write_doubles(os, std::span<const double>(lat.origin.data(), 3));
  write_pod(os, std::int32_t(lat.ranks));
  write_pod(os, std::uint8_t(lat.has_attribute_channels ? 1 : 0));
  write_doubles(os, lat.disp);
  write_doubles(os, lat.scale_delta);
  write_doubles(os, lat.quat_delta);
}

SpatialLattice read_lattice(std::istream& is) {
  SpatialLattice lat;
  lat.dims.x() = read_pod<std::int32_t>(is);
  lat.dims.y() = read_pod<std::int32_t>(is);
  lat.dims.z() = read_pod<std::int32_t>(is);
  read_doubles(is, std::span<double>(lat.spacing.data(), 3));
  read_doubles(is, std::span<double>(lat.origin.data(), 3));
  lat.ranks = read_pod<std::int32_t>(is);
  lat.has_attribute_channels = read_pod<std::uint8_t>(is) != 0;
  lat.disp.resize(std::size_t(lat.ranks) * lat.nodes() * 3);
  read_doubles(is, lat.disp);
  if (lat.has_attribute_channels) {
    lat.scale_delta.resize(std::size_t(lat.ranks) * lat.nodes() * 3);
    lat.quat_delta.resize(std::size_t(lat.ranks) * lat.nodes() * 4);
    read_doubles(is, lat.scale_delta);
    read_doubles(is, lat.quat_delta);
  }
  return lat;
}

}  // namespace

void write_motion_checkpoint(const std::filesystem::path& file, const MotionState& motion) {
  std::ofstream os = open_out(file, std::ios::binary);
  os.write(kMotionMagic, 8);
  write_pod(os, kMotionVersion);
  write_pod(os, std::uint8_t(motion.mode));
  write_lattice(os, motion.model.lattice);
  write_pod(os, std::int32_t(motion.model.temporal.channels));
  write_pod(os, std::int32_t(motion.model.temporal.n_ctrl));
  write_pod(os, motion.model.temporal.t_min);
  write_pod(os, motion.model.temporal.dt);
  write_doubles(os, motion.model.temporal.ctrl);
  write_pod(os, std::int32_t(motion.weights.ranks));
  write_pod(os, std::uint64_t(motion.weights.values.size()));
  write_doubles(os, motion.weights.values);
  if (!os) throw IoError("write failed: " + file.string());
}

MotionState read_motion_checkpoint(const std::filesystem::path& file) {
  std::ifstream is = open_in(file, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMotionMagic, 8) != 0) {
    throw IoError("not a motion checkpoint: " + file.string());
  }
  if (read_pod<std::uint32_t>(is) != kMotionVersion) throw IoError("unsupported motion version");
  MotionState motion;
  motion.mode = MotionMode(read_pod<std::uint8_t>(is));
  motion.model.lattice = read_lattice(is);
  motion.model.temporal.channels = read_pod<std::int32_t>(is);
  motion.model.temporal.n_ctrl = read_pod<std::int32_t>(is);
  motion.model.temporal.t_min = read_pod<double>(is);
  motion.model.temporal.dt = read_pod<double>(is);
  motion.model.temporal.ctrl.resize(std::size_t(motion.model.temporal.channels) *
                                    motion.model.temporal.n_ctrl);
  read_doubles(is, motion.model.temporal.ctrl);
  motion.weights.ranks = read_pod<std::int32_t>(is);
  motion.weights.values.resize(read_pod<std::uint64_t>(is));
  read_doubles(is, motion.weights.values);
  return motion;
}

namespace {

json lattice_json(const SpatialLattice& lat) {
  json j;
  j["dims"] = {lat.dims.x(), lat.dims.y(), lat.dims.z()};
  j["spacing"] = vec3_json(lat.spacing);
  j["origin"] = vec3_json(lat.origin);
  j["ranks"] = lat.ranks;
  j["attribute_channels"] = lat.has_attribute_channels;
  j["disp"] = lat.disp;
  if (lat.has_attribute_channels) {
    j["scale_delta"] = lat.scale_delta;
    j["quat_delta"] = lat.quat_delta;
  }
  return j;
}

SpatialLattice lattice_from_json(const json& j) {
  SpatialLattice lat;
  lat.dims = Vec3i(j.at("dims").at(0), j.at("dims").at(1), j.at("dims").at(2));
  lat.spacing = vec3_from(j.at("spacing"));
  lat.origin = vec3_from(j.at("origin"));
  lat.ranks = j.at("ranks");
  lat.has_attribute_channels = j.at("attribute_channels");
  lat.disp = j.at("disp").get<std::vector<double>>();
  if (lat.has_attribute_channels) {
    lat.scale_delta = j.at("scale_delta").get<std::vector<double>>();
    lat.quat_delta = j.at("quat_delta").get<std::vector<double>>();
  }
  if (lat.disp.size() != std::size_t(lat.ranks) * lat.nodes() * 3) {
    throw IoError("lattice displacement payload size mismatch");
  }
  return lat;
}

json temporal_json(const TemporalSpline& sp) {
  json j;
  j["channels"] = sp.channels;
  j["n_ctrl"] = sp.n_ctrl;
  j["t_min"] = sp.t_min;
  j["dt"] = sp.dt;
  j["ctrl"] = sp.ctrl;
  return j;
}

TemporalSpline temporal_from_json(const json& j) {
  TemporalSpline sp;
  sp.channels = j.at("channels");
  sp.n_ctrl = j.at("n_ctrl");
  sp.t_min = j.at("t_min");
  sp.dt = j.at("dt");
  sp.ctrl = j.at("ctrl").get<std::vector<double>>();
  return sp;
}

}  // namespace

void write_truth_bundle(const std::filesystem::path& file, const TruthBundle& truth) {
  json j;
  j["format"] = "cbgs-truth";
  j["version"] = kTruthVersion;
  j["seed"] = truth.seed;
  j["noise"] = {{"applied", truth.noise_applied},
                {"lambda", truth.noise.lambda},
                {"sigma", truth.noise.sigma},
                {"seed", truth.noise.seed}};

  json ph;
  ph["fov_extent"] = truth.phantom.fov_extent;
  ph["n_body"] = truth.phantom.n_body;
  ph["rho"] = truth.phantom.rho;
  json means = json::array(), covs = json::array();
  for (std::size_t b = 0; b < truth.phantom.size(); ++b) {
    means.push_back(vec3_json(truth.phantom.mean[b]));
    covs.push_back(mat3_json(truth.phantom.cov[b]));
  }
  ph["mean"] = means;
  ph["cov"] = covs;
  j["phantom"] = ph;

  json m;
  switch (truth.motion.kind()) {
    case TruthMotion::Kind::kZero:
      m["kind"] = "zero";
      break;
    case TruthMotion::Kind::kSplineFfd:
      m["kind"] = "spline_ffd";
      m["lattice"] = lattice_json(truth.motion.spline_model().lattice);
      m["temporal"] = temporal_json(truth.motion.spline_model().temporal);
      break;
    case TruthMotion::Kind::kTraceFfd:
      m["kind"] = "trace_ffd";
      m["lattice"] = lattice_json(truth.motion.lattice());
      m["traces"] = truth.motion.traces();
      break;
    case TruthMotion::Kind::kPerBlob: {
      m["kind"] = "per_blob";
      m["trace"] = truth.motion.traces().front();
      json trajs = json::array();
      for (const auto& tr : truth.motion.trajectories()) {
        trajs.push_back({{"translation", vec3_json(tr.translation)},
                         {"rot_axis", vec3_json(tr.rot_axis)},
                         {"rot_amplitude", tr.rot_amplitude}});
      }
      m["trajectories"] = trajs;
      json anchors = json::array();
      for (const Vec3& a : truth.motion.blob_anchors()) anchors.push_back(vec3_json(a));
      m["anchors"] = anchors;
      break;
    }
  }
  j["motion"] = m;
  save_json(file, j);
}

TruthBundle read_truth_bundle(const std::filesystem::path& file) {
  json j = load_json(file);
  if (j.value("format", "") != "cbgs-truth") throw IoError("not a truth bundle: " + file.string());
  TruthBundle truth;
  truth.seed = j.at("seed");
  truth.noise_applied = j.at("noise").at("applied");
  truth.noise.lambda = j.at("noise").at("lambda");
  truth.noise.sigma = j.at("noise").at("sigma");
  truth.noise.seed = j.at("noise").at("seed");

  const json& ph = j.at("phantom");
  truth.phantom.fov_extent = ph.at("fov_extent");
  truth.phantom.n_body = ph.at("n_body");
  truth.phantom.rho = ph.at("rho").get<std::vector<double>>();
  for (const json& v : ph.at("mean")) truth.phantom.mean.push_back(vec3_from(v));
  for (const json& v : ph.at("cov")) truth.phantom.cov.push_back(mat3_from(v));

  const json& m = j.at("motion");
  std::string kind = m.at("kind");
  if (kind == "zero") {
    truth.motion = TruthMotion::zero();
  } else if (kind == "spline_ffd") {
    FFDMotionModel model;
    model.lattice = lattice_from_json(m.at("lattice"));
    model.temporal = temporal_from_json(m.at("temporal"));
    truth.motion = TruthMotion::spline_ffd(std::move(model));
  } else if (kind == "trace_ffd") {
    truth.motion = TruthMotion::trace_ffd(lattice_from_json(m.at("lattice")),
                                          m.at("traces").get<std::vector<std::vector<double>>>());
  } else if (kind == "per_blob") {
    std::vector<TruthMotion::BlobTrajectory> trajs;
    for (const json& t : m.at("trajectories")) {
      TruthMotion::BlobTrajectory tr;
      tr.translation = vec3_from(t.at("translation"));
      tr.rot_axis = vec3_from(t.at("rot_axis"));
      tr.rot_amplitude = t.at("rot_amplitude");
      trajs.push_back(tr);
    }
    TruthMotion motion =
        TruthMotion::per_blob(std::move(trajs), m.at("trace").get<std::vector<double>>());
    std::vector<Vec3> anchors;
    for (const json& a : m.at("anchors")) anchors.push_back(vec3_from(a));
    motion.set_blob_anchors(std::move(anchors));
    truth.motion = motion;
  } else {
    throw IoError("unknown truth motion kind: " + kind);
  }
  return truth;
}

namespace {

struct ConfigBinder {
  json defaults = json::object();
  std::vector<std::pair<std::string, std::function<void(const json&)>>> setters;

  template <typename T>
  void bind(const std::string& key, T* target) {
    defaults[key] = *target;
    setters.emplace_back(key, [target](const json& v) { *target = v.get<T>(); });
  }
  void bind_mode(const std::string& key, MotionMode* target) {
    defaults[key] = motion_mode_name(*target);
    setters.emplace_back(
        key, [target](const json& v) { *target = motion_mode_from_name(v.get<std::string>()); });
  }
};

ConfigBinder bind_config(TrainConfig& c) {
  ConfigBinder b;
  b.bind("iterations", &c.iterations);
  b.bind_mode("mode", &c.mode);
  b.bind("freeze-motion", &c.freeze_motion);
  b.bind("deterministic", &c.deterministic);
  b.bind("parallel", &c.parallel);
  b.bind("seed", &c.seed);
  b.bind("rank", &c.rank);
  b.bind("temporal-spacing", &c.temporal_spacing);
  b.bind("lattice-spacing-voxels", &c.lattice_spacing_voxels);
  b.bind("init-points", &c.init_points);
  b.bind("init-threshold-rel", &c.init_threshold_rel);
  b.bind("lr-rho-init", &c.lr_rho.init);
  b.bind("lr-rho-final", &c.lr_rho.final_value);
  b.bind("lr-mean-init", &c.lr_mean_rel.init);
  b.bind("lr-mean-final", &c.lr_mean_rel.final_value);
  b.bind("lr-quat-init", &c.lr_quat.init);
  b.bind("lr-quat-final", &c.lr_quat.final_value);
  b.bind("lr-scale-init", &c.lr_scale.init);
  b.bind("lr-scale-final", &c.lr_scale.final_value);
  b.bind("lr-lattice-init", &c.lr_lattice.init);
  b.bind("lr-lattice-final", &c.lr_lattice.final_value);
  b.bind("lr-temporal-init", &c.lr_temporal.init);
  b.bind("lr-temporal-final", &c.lr_temporal.final_value);
  b.bind("lr-pg-init", &c.lr_pg.init);
  b.bind("lr-pg-final", &c.lr_pg.final_value);
  b.bind("densify-interval", &c.densify_interval);
  b.bind("densify-stop-fraction", &c.densify_stop_fraction);
  b.bind("densify-grad-threshold", &c.densify_grad_threshold);
  b.bind("prune-rel-threshold", &c.prune_rel_threshold);
  b.bind("split-factor", &c.split_factor);
  b.bind("split-scale-fraction", &c.split_scale_fraction);
  b.bind("max-kernels", &c.max_kernels);
  b.bind("checkpoint-interval", &c.checkpoint_interval);
  b.bind("log-interval", &c.log_interval);
  b.bind("low-pass-px2", &c.low_pass_px2);
  b.bind("scale-clamp-min-voxels", &c.scale_clamp_min_voxels);
  b.bind("scale-clamp-max-fov", &c.scale_clamp_max_fov);
  return b;
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& file, const TrainConfig& defaults) {
  TrainConfig config = defaults;
  ConfigBinder binder = bind_config(config);
  json j = load_json(file);
  if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(binder.setters.begin(), binder.setters.end(),
                           [&key](const auto& p) { return p.first == key; });
    if (it == binder.setters.end()) {
      throw ValidationError("unknown config key: " + key);
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError("bad value for config key '" + key + "': " + e.what());
    }
  }
  return config;
}

std::vector<std::string> train_config_keys() {
  TrainConfig config;
  ConfigBinder binder = bind_config(config);
  std::vector<std::string> keys;
  for (const auto& [key, setter] : binder.setters) keys.push_back(key);
  return keys;
}

TrainConfig apply_config_overrides(const TrainConfig& base,
                                   const std::vector<std::pair<std::string, std::string>>& kv) {
  TrainConfig config = base;
  ConfigBinder binder = bind_config(config);
  for (const auto& [key, text] : kv) {
    auto it = std::find_if(binder.setters.begin(), binder.setters.end(),
                           [&](const auto& p) { return p.first == key; });
    if (it == binder.setters.end()) throw ValidationError("unknown config key: " + key);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;  // bare word, e.g. a motion mode name
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError("bad value for '" + key + "': " + e.what());
    }
  }
  return config;
}

std::string config_to_json(const TrainConfig& config) {
  TrainConfig copy = config;
  ConfigBinder binder = bind_config(copy);
  return binder.defaults.dump(2) + "\n";
}

std::string default_config_json() {
  TrainConfig config;
  ConfigBinder binder = bind_config(config);
  return binder.defaults.dump(2) + "\n";
}

void write_pgm(const std::filesystem::path& file, const DetectorImage& image, double lo,
               double hi) {
  if (!(hi > lo)) throw ValidationError("empty display window");
  std::ofstream os = open_out(file, std::ios::binary);
  os << "P5\n" << image.cols << " " << image.rows << "\n255\n";
  for (float v : image.data) {
    double s = (double(v) - lo) / (hi - lo);
    int byte = int(std::lround(std::clamp(s, 0.0, 1.0) * 255.0));
    os.put(char(byte));
  }
  if (!os) throw IoError("write failed: " + file.string());
}

void write_text_file(const std::filesystem::path& file, const std::string& content) {
  std::ofstream os = open_out(file, std::ios::out);
  os << content;
  if (!os) throw IoError("write failed: " + file.string());
}

}  // namespace cbgs
