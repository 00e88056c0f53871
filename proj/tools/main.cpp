// Command-line front end: simulate / reconstruct / evaluate / export /
// selftest. Exit codes: 0 success, 1 validation error, 2 runtime error,
// 3 selftest failure.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cbgs/io.hpp"
#include "cbgs/metrics.hpp"
#include "cbgs/phantom.hpp"
#include "cbgs/recon_engine.hpp"
#include "cbgs/selftest.hpp"

namespace fs = std::filesystem;
using namespace cbgs;

namespace {

struct SimulateArgs {
  std::string out;
  std::string preset = "desk";
  int views = -1;
  bool noise = false;
  double lambda = 1e8;
  double sigma = 4.0;
  std::uint64_t seed = 0;
  bool mismatch = false;
  int init_grid = 64;
  double init_spacing = 3.2;
  int init_time_samples = 8;
};

int run_simulate(const SimulateArgs& args) {
  SimSpec spec;
  if (args.preset == "desk") {
    spec = desk_fixture(args.seed, args.noise, args.mismatch);
  } else if (args.preset == "full") {
    spec = desk_fixture(args.seed, args.noise, args.mismatch);
    spec.geom = full_scan_geometry();
  } else {
    throw ValidationError("unknown preset '" + args.preset + "' (desk|full)");
  }
  spec.noise.lambda = args.lambda;
  spec.noise.sigma = args.sigma;
  if (args.views > 0) {
    spec.geom = make_circular_geometry(
        spec.geom.sid, spec.geom.sdd, args.views,
        DetectorSpec{spec.geom.detector_rows, spec.geom.detector_cols, spec.geom.pixel_pitch},
        spec.geom.detector_offset_u);
  }

  std::cout << "simulating " << spec.geom.n_views << " views ("
            << spec.geom.detector_rows << "x" << spec.geom.detector_cols << " @ "
            << spec.geom.pixel_pitch << " mm, noise " << (spec.apply_noise ? "on" : "off")
            << ")\n";
  SimResult result = make_dataset(spec);

  fs::path out(args.out);
  fs::create_directories(out);
  write_projection_set(out / "projections", result.projections);
  write_truth_bundle(out / "truth.json", result.truth);

  // Init volume: the mean of ground-truth volumes over a few time samples, a
  // stand-in for a static reconstruction from all projections.
  GridSpec grid = GridSpec::centered(args.init_grid, args.init_spacing);
  VoxelVolume init(grid);
  std::vector<double> samples = eval_time_samples(result.projections.n_t, args.init_time_samples);
  for (double t : samples) {
    VoxelVolume vol = result.truth.volume_at(t, grid);
    for (std::size_t v = 0; v < init.data.size(); ++v) init.data[v] += vol.data[v];
  }
  for (float& v : init.data) v /= float(samples.size());
  write_volume(out / "init_volume", init);

  nlohmann::json manifest;
  manifest["seed"] = args.seed;
  manifest["preset"] = args.preset;
  manifest["rng_streams"] = {"phantom", "trace", "trace2", "truth_field", "noise", "init", "train"};
  manifest["noise"] = {{"applied", spec.apply_noise}, {"lambda", spec.noise.lambda},
                       {"sigma", spec.noise.sigma}};
  manifest["files"] = {"projections/projections.json", "truth.json", "init_volume.json",
                       "init_volume.raw"};
  write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << (out / "projections").string() << " (" << result.projections.size()
            << " views), truth.json, init_volume, manifest.json\n";
  return 0;
}

struct ReconstructArgs {
  std::string projections;
  std::string init_volume;
  std::string out;
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int run_reconstruct(const ReconstructArgs& args) {
  TrainConfig config;
  if (!args.config_file.empty()) {
    config = load_train_config(args.config_file, config);
  }
  config = apply_config_overrides(config, args.overrides);

  ProjectionSet projections = read_projection_set(args.projections);
  VoxelVolume init = read_volume(args.init_volume);

  fs::path out(args.out);
  fs::create_directories(out);
  write_text_file(out / "config.json", config_to_json(config));

  std::ofstream log(out / "metrics.log");
  if (!log) throw IoError("cannot open metrics log for writing");

  TrainHooks hooks;
  hooks.on_log = [&log](const TrainLogRow& row) {
    log << "iter=" << row.iteration << " loss=" << row.loss << " kernels=" << row.kernels
        << " folds=" << row.fold_incidents << " wall_ms=" << row.wall_ms << "\n";
    log.flush();
  };
  hooks.on_checkpoint = [&out](long iter, const GaussianCloud& cloud, const MotionState& motion) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_%06ld", iter);
    write_cloud_checkpoint(out / ("cloud" + std::string(suffix) + ".ckpt"), cloud);
    write_motion_checkpoint(out / ("motion" + std::string(suffix) + ".ckpt"), motion);
  };

  std::cout << "reconstructing: mode=" << motion_mode_name(config.mode)
            << " iterations=" << config.iterations << " seed=" << config.seed << "\n";
  try {
    TrainResult result = train(config, projections, init, hooks);
    write_cloud_checkpoint(out / "cloud.ckpt", result.cloud);
    write_motion_checkpoint(out / "motion.ckpt", result.motion);
    std::cout << "final loss " << result.final_loss << ", " << result.cloud.size()
              << " kernels, " << result.fold_incidents << " fold incidents\n";
  } catch (const NumericError& e) {
    write_text_file(out / "abort_diagnostics.txt", std::string(e.what()) + "\n");
    throw;
  }
  return 0;
}

struct EvaluateArgs {
  std::string cloud;
  std::string motion;
  std::string truth;
  std::string projections;
  std::string out;
  int grid = 64;
  double grid_spacing = 0.0;  // 0: derived from the FOV
  int time_samples = 10;
  bool all_times = false;
};

int run_evaluate(const EvaluateArgs& args) {
  GaussianCloud cloud = read_cloud_checkpoint(args.cloud);
  MotionState motion = read_motion_checkpoint(args.motion);
  TruthBundle truth = read_truth_bundle(args.truth);
  ProjectionSet projections = read_projection_set(args.projections);

  double spacing = args.grid_spacing > 0.0
                       ? args.grid_spacing
                       : 2.0 * projections.geom.fov_radius() / double(args.grid);
  GridSpec grid = GridSpec::centered(args.grid, spacing);
  std::vector<double> samples =
      eval_time_samples(projections.n_t, args.all_times ? projections.n_t : args.time_samples);

  EvalReport report = evaluate_run(cloud, motion, truth, projections.geom, grid, samples);
  std::string text = format_report(report);
  if (!args.out.empty()) write_text_file(args.out, text);
  std::cout << text;
  return 0;
}

struct ExportArgs {
  std::string cloud;
  std::string motion;
  std::string projections;
  std::string out;
  std::string times = "0";
  int grid = 64;
  double grid_spacing = 0.0;
  bool volumes = false;
  bool dvf = false;
  bool renders = false;
  bool slices = false;
  double window_lo = 0.0;
  double window_hi = 0.03;
};

int run_export(const ExportArgs& args) {
  GaussianCloud cloud = read_cloud_checkpoint(args.cloud);
  MotionState motion = read_motion_checkpoint(args.motion);
  ProjectionSet projections = read_projection_set(args.projections);
  fs::path out(args.out);
  fs::create_directories(out);

  std::vector<double> times;
  std::stringstream ss(args.times);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) times.push_back(std::stod(item));
  }
  if (times.empty()) throw ValidationError("no export times given");

  double spacing = args.grid_spacing > 0.0
                       ? args.grid_spacing
                       : 2.0 * projections.geom.fov_radius() / double(args.grid);
  GridSpec grid = GridSpec::centered(args.grid, spacing);

  bool any = args.volumes || args.dvf || args.renders || args.slices;
  for (double t : times) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_t%07.1f", t);
    CloudSnapshot snap = warp(cloud, motion, t);
    if (args.volumes || args.slices || !any) {
      VoxelVolume vol = rasterize_kernels(snap.view(), grid);
      if (args.volumes || !any) write_volume(out / ("volume" + std::string(suffix)), vol);
      if (args.slices) {
        int k = grid.dims.z() / 2;
        DetectorImage slice(grid.dims.y(), grid.dims.x());
        std::vector<float> raw(slice.data.size());
        for (int j = 0; j < grid.dims.y(); ++j) {
          for (int i = 0; i < grid.dims.x(); ++i) {
            slice.at(j, i) = vol.at(i, j, k);
            raw[std::size_t(j) * grid.dims.x() + i] = vol.at(i, j, k);
          }
        }
        write_pgm(out / ("slice" + std::string(suffix) + ".pgm"), slice, args.window_lo,
                  args.window_hi);
        std::ofstream rf(out / ("slice" + std::string(suffix) + ".raw"), std::ios::binary);
        rf.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * 4));
      }
    }
    if (args.dvf) {
      if (motion.mode == MotionMode::kPerGaussian) {
        throw ValidationError("per-gaussian mode defines no continuous DVF to export");
      }
      std::vector<float> field(grid.voxel_count() * 3);
      for (int k = 0; k < grid.dims.z(); ++k) {
        for (int j = 0; j < grid.dims.y(); ++j) {
          for (int i = 0; i < grid.dims.x(); ++i) {
            Vec3 x = grid.voxel_center(i, j, k);
            Vec3 d = displacement(motion.model, x, t) - x;
            std::size_t v = grid.index(i, j, k) * 3;
            field[v] = float(d.x());
            field[v + 1] = float(d.y());
            field[v + 2] = float(d.z());
          }
        }
      }
      std::ofstream df(out / ("dvf" + std::string(suffix) + ".raw"), std::ios::binary);
      df.write(reinterpret_cast<const char*>(field.data()), std::streamsize(field.size() * 4));
    }
    if (args.renders) {
      for (int v = 0; v < projections.geom.n_views; ++v) {
        if (projections.time_index[v] == int(t)) {
          DetectorImage img = render(snap.view(), view_pose(projections.geom, v),
                                     projections.geom);
          char rsuffix[48];
          std::snprintf(rsuffix, sizeof(rsuffix), "render_v%04d%s", v, suffix);
          std::ofstream rf(out / (std::string(rsuffix) + ".raw"), std::ios::binary);
          rf.write(reinterpret_cast<const char*>(img.data.data()),
                   std::streamsize(img.data.size() * 4));
          break;
        }
      }
    }
  }
  std::cout << "exported " << times.size() << " time points to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic cone-beam CT reconstruction with deformable Gaussian splatting"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--preset", sim.preset, "desk|full");
  simulate->add_option("--views", sim.views, "override view count");
  simulate->add_flag("--noise", sim.noise, "apply the count-domain noise model");
  simulate->add_option("--lambda", sim.lambda, "photon fluence (counts)");
  simulate->add_option("--sigma", sim.sigma, "electronic noise (counts)");
  simulate->add_option("--seed", sim.seed, "run seed");
  simulate->add_flag("--mismatch", sim.mismatch, "per-blob truth motion outside the model class");
  simulate->add_option("--init-grid", sim.init_grid, "init volume voxels per axis");
  simulate->add_option("--init-spacing", sim.init_spacing, "init volume voxel size (mm)");

  ReconstructArgs rec;
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "fit the cloud and motion model");
  reconstruct->add_option("--projections", rec.projections, "projection set directory")->required();
  reconstruct->add_option("--init-volume", rec.init_volume, "init volume stem")->required();
  reconstruct->add_option("--out", rec.out, "output directory")->required();
  reconstruct->add_option("--config", rec.config_file, "JSON config file");
  std::map<std::string, std::string> override_values;
  for (const std::string& key : train_config_keys()) {
    reconstruct->add_option_function<std::string>(
        "--" + key,
        [&override_values, key](const std::string& v) { override_values[key] = v; });
  }

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "PSNR/RMSE/DVF report against the truth");
  evaluate->add_option("--cloud", ev.cloud, "cloud checkpoint")->required();
  evaluate->add_option("--motion", ev.motion, "motion checkpoint")->required();
  evaluate->add_option("--truth", ev.truth, "truth bundle")->required();
  evaluate->add_option("--projections", ev.projections, "projection set directory")->required();
  evaluate->add_option("--out", ev.out, "report file");
  evaluate->add_option("--grid", ev.grid, "evaluation voxels per axis");
  evaluate->add_option("--grid-spacing", ev.grid_spacing, "evaluation voxel size (mm)");
  evaluate->add_option("--time-samples", ev.time_samples, "evaluation time count");
  evaluate->add_flag("--all-times", ev.all_times, "evaluate every time index");

  ExportArgs ex;
  CLI::App* exporter = app.add_subcommand("export", "volumes / DVF grids / renders at times");
  exporter->add_option("--cloud", ex.cloud, "cloud checkpoint")->required();
  exporter->add_option("--motion", ex.motion, "motion checkpoint")->required();
  exporter->add_option("--projections", ex.projections, "projection set directory")->required();
  exporter->add_option("--out", ex.out, "output directory")->required();
  exporter->add_option("--times", ex.times, "comma-separated time indices");
  exporter->add_option("--grid", ex.grid, "voxels per axis");
  exporter->add_option("--grid-spacing", ex.grid_spacing, "voxel size (mm)");
  exporter->add_flag("--volumes", ex.volumes, "write volumes");
  exporter->add_flag("--dvf", ex.dvf, "write DVF grids");
  exporter->add_flag("--renders", ex.renders, "write rendered projections");
  exporter->add_flag("--slices", ex.slices, "write central slices (pgm + raw)");
  exporter->add_option("--window-lo", ex.window_lo, "display window lower bound (mm^-1)");
  exporter->add_option("--window-hi", ex.window_hi, "display window upper bound (mm^-1)");

  CLI::App* selftest = app.add_subcommand("selftest", "gradient/oracle/invariant suites");
  CLI::App* config_cmd = app.add_subcommand("print-config", "print the default config JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (reconstruct->parsed()) {
      for (const auto& [k, v] : override_values) rec.overrides.emplace_back(k, v);
      return run_reconstruct(rec);
    }
    if (evaluate->parsed()) return run_evaluate(ev);
    if (exporter->parsed()) return run_export(ex);
    if (config_cmd->parsed()) {
      std::cout << default_config_json();
      return 0;
    }
    if (selftest->parsed()) {
      int failures = run_selftest(std::cout);
      return failures == 0 ? 0 : 3;
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
