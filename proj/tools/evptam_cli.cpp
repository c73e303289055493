// Batch drivers: run the pipeline on a dataset, run evaluation, estimate the
// event-to-frame alignment offset, generate simulator datasets, sweep
// accumulation-window widths and plot trajectories.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 tracking
// failure (the run produced no usable trajectory).

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "evptam/pipeline.hpp"
#include "evptam/plot.hpp"
#include "evptam/simulator.hpp"

namespace fs = std::filesystem;
using namespace evptam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTracking = 4;

struct FlagOverrides {
  std::optional<std::string> dataset, adapter, calibration, output, detector_backend,
      detector_model;
  std::optional<double> beta_cap, frustum_near, frustum_far, matching_cell_size,
      matching_neighborhood, matching_distance, assumed_scene_depth, huber_delta;
  std::optional<int> mode_feature_floor, ba_window, loop_min_gap, max_features;
  std::optional<std::uint32_t> seed;
  bool deterministic = false;
  bool no_events = false;
  bool no_loop = false;
  std::vector<double> align_left, align_right;
};

void add_override_flags(CLI::App* cmd, FlagOverrides& o) {
  cmd->add_option("--dataset", o.dataset, "dataset directory");
  cmd->add_option("--adapter", o.adapter, "dataset adapter: sim|vector|tumvie");
  cmd->add_option("--calibration", o.calibration, "rig calibration file override");
  cmd->add_option("--output", o.output, "output directory");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_flag("--deterministic", o.deterministic,
                "serialize track -> map -> loop per frame (bitwise reproducible)");
  cmd->add_flag("--no-events", o.no_events, "frames-only ablation (beta = 0)");
  cmd->add_flag("--no-loop", o.no_loop, "disable loop closure");
  cmd->add_option("--beta-cap", o.beta_cap, "fusion weight cap");
  cmd->add_option("--align-left", o.align_left, "left alignment offset px (2 values)")
      ->expected(2);
  cmd->add_option("--align-right", o.align_right, "right alignment offset px (2 values)")
      ->expected(2);
  cmd->add_option("--frustum-near", o.frustum_near, "near depth, m");
  cmd->add_option("--frustum-far", o.frustum_far, "far depth, m");
  cmd->add_option("--matching-cell-size", o.matching_cell_size, "matching grid cell, px");
  cmd->add_option("--matching-neighborhood", o.matching_neighborhood, "search radius, cells");
  cmd->add_option("--matching-distance", o.matching_distance, "descriptor gate");
  cmd->add_option("--assumed-scene-depth", o.assumed_scene_depth, "warp depth fallback, m");
  cmd->add_option("--huber-delta", o.huber_delta, "robust loss threshold, px");
  cmd->add_option("--mode-feature-floor", o.mode_feature_floor, "APS/DVS switch floor");
  cmd->add_option("--ba-window", o.ba_window, "BA sliding window, keyframes");
  cmd->add_option("--loop-min-gap", o.loop_min_gap, "loop candidate keyframe gap");
  cmd->add_option("--max-features", o.max_features, "detector feature budget");
  cmd->add_option("--detector", o.detector_backend, "detector backend: builtin|learned");
  cmd->add_option("--detector-model", o.detector_model, "learned detector model path");
}

void apply_overrides(const FlagOverrides& o, RunConfig& cfg) {
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.adapter) cfg.adapter = *o.adapter;
  if (o.calibration) cfg.calibration = *o.calibration;
  if (o.output) cfg.output = *o.output;
  if (o.seed) cfg.seed = *o.seed;
  if (o.deterministic) cfg.deterministic = true;
  if (o.no_events) {
    cfg.events_enabled = false;
    cfg.beta_cap = 0.0;
  }
  if (o.no_loop) cfg.loop_enabled = false;
  if (o.beta_cap) cfg.beta_cap = *o.beta_cap;
  if (o.align_left.size() == 2) cfg.align_left = Eigen::Vector2d(o.align_left[0], o.align_left[1]);
  if (o.align_right.size() == 2) {
    cfg.align_right = Eigen::Vector2d(o.align_right[0], o.align_right[1]);
  }
  if (o.frustum_near) cfg.frustum_near = *o.frustum_near;
  if (o.frustum_far) cfg.frustum_far = *o.frustum_far;
  if (o.matching_cell_size) cfg.matching_cell_size = *o.matching_cell_size;
  if (o.matching_neighborhood) cfg.matching_neighborhood = *o.matching_neighborhood;
  if (o.matching_distance) cfg.matching_distance = *o.matching_distance;
  if (o.assumed_scene_depth) cfg.assumed_scene_depth = *o.assumed_scene_depth;
  if (o.huber_delta) cfg.huber_delta = *o.huber_delta;
  if (o.mode_feature_floor) cfg.mode_feature_floor = *o.mode_feature_floor;
  if (o.ba_window) cfg.ba_window = *o.ba_window;
  if (o.loop_min_gap) cfg.loop_min_gap = *o.loop_min_gap;
  if (o.max_features) cfg.max_features = *o.max_features;
  if (o.detector_backend) cfg.detector_backend = *o.detector_backend;
  if (o.detector_model) cfg.detector_model = *o.detector_model;
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");
  if (!fs::exists(cfg.dataset)) throw ConfigError("dataset path does not exist: " + cfg.dataset);
  if (!cfg.calibration.empty() && !fs::exists(cfg.calibration)) {
    throw ConfigError("calibration file does not exist: " + cfg.calibration);
  }
  if (cfg.beta_cap < 0.0 || cfg.beta_cap > 1.0) throw ConfigError("beta_cap must be in [0,1]");
  if (!(cfg.frustum_near > 0.0) || !(cfg.frustum_far > cfg.frustum_near)) {
    throw ConfigError("frustum range must satisfy 0 < near < far");
  }
  if (!(cfg.assumed_scene_depth > cfg.frustum_near) ||
      !(cfg.assumed_scene_depth < cfg.frustum_far)) {
    throw ConfigError("assumed_scene_depth must lie inside the frustum");
  }
}

int cmd_run(const std::string& config_path, const FlagOverrides& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path);
  apply_overrides(overrides, cfg);
  validate_run_config(cfg);

  const RunReport report = run_pipeline(cfg);
  std::cout << "frames: " << report.frames << "  keyframes: " << report.keyframes
            << "  map points: " << report.map_points << "  lost: " << report.lost_frames
            << "  loops: " << report.loops.size() << "\n";
  std::cout << "outputs in " << cfg.output << " (trajectory.tum, map.txt, report.json)\n";
  if (report.keyframes == 0 || report.lost_frames == report.frames) return kExitTracking;
  return kExitOk;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, const std::string& mode_str,
             std::size_t delta, const std::string& out_dir) {
  const Trajectory est = read_tum(est_path);
  const Trajectory gt = read_tum(gt_path);
  const AlignMode mode = mode_str == "sim3" ? AlignMode::Sim3 : AlignMode::SE3;

  const AteResult a = ate(est, gt, mode);
  const RpeResult r = rpe(est, gt, delta);

  nlohmann::json j;
  j["ate_rmse"] = a.rmse;
  j["ate_mean"] = a.mean;
  j["ate_max"] = a.max;
  j["rpe_rmse"] = r.rmse;
  j["rpe_mean"] = r.mean;
  j["rpe_std"] = r.stddev;
  j["rpe_max"] = r.max;
  j["n_pairs"] = a.n_pairs;
  j["mode"] = mode_str;
  j["delta"] = delta;
  std::cout << j.dump(2) << "\n";

  fs::create_directories(out_dir);
  std::ofstream report(fs::path(out_dir) / "eval.json");
  report << j.dump(2) << "\n";

  std::vector<PlotSeries> series;
  series.push_back(trajectory_series(gt, "ground truth", {150, 150, 150}));
  Trajectory aligned = est;
  for (auto& rec : aligned) {
    rec.pose = Pose(a.alignment.rotation * rec.pose.rotation(),
                    a.alignment.apply(rec.pose.translation()));
  }
  series.push_back(trajectory_series(aligned, "estimate", {30, 60, 220}));
  write_plot_ppm(series, 800, 600, (fs::path(out_dir) / "trajectory.ppm").string());
  return kExitOk;
}

int cmd_calibrate_align(const std::string& matches_path, const std::string& calib_path,
                        const std::string& side) {
  std::ifstream in(matches_path);
  if (!in) throw DataError("cannot open match file: " + matches_path);
  std::string line;
  std::getline(in, line);  // fx,fy,ex,ey header
  std::vector<Eigen::Vector2d> frame_px, event_px;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double fx, fy, ex, ey;
    if (!(ss >> fx >> fy >> ex >> ey)) throw ParseError("malformed match record", line_no);
    frame_px.emplace_back(fx, fy);
    event_px.emplace_back(ex, ey);
  }

  const AlignmentEstimate est = calibrate_alignment(frame_px, event_px);
  std::cout << "delta_align (" << side << "): " << est.offset.x() << " " << est.offset.y()
            << " px  (rms residual " << est.rms_residual << " px over " << est.num_matches
            << " matches)\n";

  RigCalibration rig = read_rig_calibration(calib_path);
  (side == "right" ? rig.align_right : rig.align_left) = est.offset;
  write_rig_calibration(rig, calib_path);
  std::cout << "updated " << calib_path << "\n";
  return kExitOk;
}

int cmd_simulate(const std::string& scene, const std::string& out_dir, std::uint32_t seed,
                 double duration, double rate, const std::vector<double>& dim) {
  SceneSpec spec = make_loop_fixture();
  if (scene == "figure-eight") {
    spec.path = PathKind::FigureEight;
  } else if (scene == "circle") {
    spec.path = PathKind::Circle;
  } else if (scene == "line") {
    spec.path = PathKind::Line;
  } else {
    throw ConfigError("unknown scene: " + scene);
  }
  spec.seed = seed;
  if (duration > 0.0) spec.duration = duration;
  if (rate > 0.0) spec.frame_rate = rate;
  if (dim.size() == 3) {
    spec.dimming = FrameDimming{dim[0], dim[1], dim[2]};
  } else if (!dim.empty()) {
    throw ConfigError("--dim expects t_start t_end factor");
  }

  const SimulatedData data = simulate(spec);
  write_dataset(data, out_dir);
  std::cout << "wrote " << data.frames.size() << " stereo frames, " << data.events.left.size()
            << "/" << data.events.right.size() << " events to " << out_dir << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const FlagOverrides& overrides,
               const std::vector<double>& widths, bool constant_count, std::size_t count) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config(config_path);
  apply_overrides(overrides, cfg);
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");

  const auto rows = run_ablation_windows(cfg, widths, constant_count, count);
  std::cout << "width_ms,total_events,min_window,max_window,snapshot\n";
  for (const auto& row : rows) {
    std::uint64_t total = 0, mn = UINT64_MAX, mx = 0;
    for (auto c : row.counts) {
      total += c;
      mn = std::min(mn, c);
      mx = std::max(mx, c);
    }
    if (row.counts.empty()) mn = 0;
    std::cout << (row.width_ms < 0 ? std::string("constant-count")
                                   : std::to_string(row.width_ms))
              << "," << total << "," << mn << "," << mx << "," << row.snapshot_path << "\n";
  }
  return kExitOk;
}

int cmd_plot(const std::string& traj_path, const std::string& gt_path,
             const std::string& out_path) {
  std::vector<PlotSeries> series;
  if (!gt_path.empty()) {
    series.push_back(trajectory_series(read_tum(gt_path), "ground truth", {150, 150, 150}));
  }
  series.push_back(trajectory_series(read_tum(traj_path), "trajectory", {30, 60, 220}));
  write_plot_ppm(series, 800, 600, out_path);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-aided stereo parallel tracking and mapping"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run the pipeline on a dataset");
  std::string run_config;
  run->add_option("--config", run_config, "run configuration json");
  FlagOverrides run_overrides;
  add_override_flags(run, run_overrides);

  // eval
  auto* eval = app.add_subcommand("eval", "ATE/RPE against ground truth");
  std::string est_path, gt_path, eval_mode = "se3", eval_out = "eval_out";
  std::size_t rpe_delta = 1;
  eval->add_option("--est", est_path, "estimated trajectory (TUM)")->required();
  eval->add_option("--gt", gt_path, "ground-truth trajectory (TUM)")->required();
  eval->add_option("--mode", eval_mode, "alignment: se3|sim3");
  eval->add_option("--delta", rpe_delta, "RPE frame delta");
  eval->add_option("--output", eval_out, "report/plot directory");

  // calibrate-align
  auto* cal = app.add_subcommand("calibrate-align", "estimate the pixel alignment offset");
  std::string matches_path, calib_path, cal_side = "left";
  cal->add_option("--matches", matches_path, "csv of fx,fy,ex,ey pixel pairs")->required();
  cal->add_option("--calib", calib_path, "calibration file to update")->required();
  cal->add_option("--side", cal_side, "left|right");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string sim_scene = "figure-eight", sim_out = "sim_out";
  std::uint32_t sim_seed = 7;
  double sim_duration = 0.0, sim_rate = 0.0;
  std::vector<double> sim_dim;
  sim->add_option("--scene", sim_scene, "figure-eight|circle|line");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--duration", sim_duration, "seconds");
  sim->add_option("--rate", sim_rate, "frame rate, Hz");
  sim->add_option("--dim", sim_dim, "frame dimming: t_start t_end factor")->expected(3);

  // ablate-windows
  auto* abl = app.add_subcommand("ablate-windows", "accumulation-window width sweep");
  std::string abl_config;
  std::vector<double> abl_widths;
  bool abl_constant = false;
  std::size_t abl_count = 0;
  abl->add_option("--config", abl_config, "run configuration json");
  abl->add_option("--widths", abl_widths, "window widths in ms");
  abl->add_flag("--constant-count", abl_constant, "constant-count windows instead");
  abl->add_option("--count", abl_count, "events per constant-count window");
  FlagOverrides abl_overrides;
  add_override_flags(abl, abl_overrides);

  // plot
  auto* plot = app.add_subcommand("plot", "plot trajectories to a PPM image");
  std::string plot_traj, plot_gt, plot_out = "plot.ppm";
  plot->add_option("--traj", plot_traj, "trajectory (TUM)")->required();
  plot->add_option("--gt", plot_gt, "ground truth (TUM)");
  plot->add_option("--out", plot_out, "output image");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_config, run_overrides);
    if (eval->parsed()) return cmd_eval(est_path, gt_path, eval_mode, rpe_delta, eval_out);
    if (cal->parsed()) return cmd_calibrate_align(matches_path, calib_path, cal_side);
    if (sim->parsed()) {
      return cmd_simulate(sim_scene, sim_out, sim_seed, sim_duration, sim_rate, sim_dim);
    }
    if (abl->parsed()) {
      return cmd_ablate(abl_config, abl_overrides, abl_widths, abl_constant, abl_count);
    }
    if (plot->parsed()) return cmd_plot(plot_traj, plot_gt, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
