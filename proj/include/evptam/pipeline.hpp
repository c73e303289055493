#ifndef EVPTAM_PIPELINE_HPP
#define EVPTAM_PIPELINE_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evptam/dataset.hpp"
#include "evptam/fusion.hpp"
#include "evptam/loopclosure.hpp"
#include "evptam/tracking.hpp"
#include "evptam/trajectory.hpp"

// Batch drivers wiring event tensors, fusion, tracking, mapping and loop
// closure over a dataset. The default mode runs mapping and loop closure as
// background workers under the map's commit-snapshot contract; deterministic
// mode serializes them (track -> map -> loop per frame) for reproducibility.

namespace evptam {

struct RunConfig {
  std::string dataset;
  std::string adapter = "sim";
  std::string calibration;  // empty: the dataset's own calibration file
  std::string output = "out";
  std::uint32_t seed = 0;
  bool deterministic = false;

  // spatial alignment / matching (config overrides the calibration file when set)
  std::optional<Eigen::Vector2d> align_left, align_right;
  double frustum_near = 0.1, frustum_far = 30.0;
  double matching_cell_size = 15.0;
  double matching_neighborhood = 2.0;
  double matching_distance = 0.8;  // descriptor-space gate for the builtin backend

  // fusion
  double beta_cap = 0.3;
  int mode_feature_floor = 50;
  double assumed_scene_depth = 6.0;
  bool bilinear_splat = false;

  // event tensor
  bool events_enabled = true;
  double decay_alpha = 0.5;
  double decay_eta = 0.030;  // s
  int median_radius = 1;
  double binary_threshold = 0.05;

  // detector
  std::string detector_backend = "builtin";
  std::string detector_model;
  int max_features = 400;
  double detector_min_score = 1e-4;

  // solver budgets / robustness
  double huber_delta = 1.0;
  int tracking_iterations = 10;
  int ba_iterations = 30;
  int inlier_floor = 10;
  double diverged_px = 5.0;

  // mapping
  int ba_window = 10;
  bool depth_weighting = true;
  double sigma_px = 1.0;
  double cull_reproj_px = 3.0;

  // loop closure
  bool loop_enabled = true;
  int loop_min_gap = 30;
  double loop_max_embedding_distance = 0.3;
  int loop_ransac_iterations = 200;
  double loop_inlier_px = 2.0;
  int loop_inlier_floor = 15;

  TrackingConfig tracking_config() const;
  MappingConfig mapping_config() const;
  LoopConfig loop_config() const;
  FusionConfig fusion_config() const;
  E3ctConfig e3ct_config(int height, int width) const;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

struct FrameLog {
  std::size_t index = 0;
  double t_f = 0.0;
  int raw_features = 0;  // detected on the raw frame (mode rule input)
  double beta = 0.0;
  FusionMode mode = FusionMode::ApsBiased;
  int matches = 0, inliers = 0;
  bool lost = false;
  bool keyframe = false;
  std::uint64_t window_events = 0;
};

struct LoopEvent {
  int query_kf = -1, match_kf = -1;
  double embedding_distance = 0.0;
  int inliers = 0;
  bool verified = false;
};

struct RunReport {
  std::size_t frames = 0;
  std::size_t keyframes = 0;
  std::size_t lost_frames = 0;
  std::size_t map_points = 0;
  std::vector<FrameLog> per_frame;
  std::vector<LoopEvent> loops;
  std::map<std::string, double> timing_ms;  // per stage totals
  double wall_seconds = 0.0;
  Trajectory trajectory;  // final (loop-corrected) camera-in-world poses

  std::string to_json() const;
};

// Runs the full pipeline; writes trajectory.tum, trajectory_live.tum,
// map.txt, loops.csv and report.json into cfg.output.
RunReport run_pipeline(const RunConfig& cfg);

// Window-width ablation: per width, the event count of every window plus a
// mid-sequence tensor snapshot (PGM). Optionally constant-count windows.
struct AblationRow {
  double width_ms = 0.0;
  std::vector<std::uint64_t> counts;
  std::string snapshot_path;
};
std::vector<AblationRow> run_ablation_windows(const RunConfig& cfg,
                                              const std::vector<double>& widths_ms,
                                              bool constant_count = false,
                                              std::size_t target_count = 0);

}  // namespace evptam

#endif  // EVPTAM_PIPELINE_HPP
