#include "evptam/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "evptam/image_io.hpp"
#include "evptam/plot.hpp"

namespace evptam {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TrackingConfig RunConfig::tracking_config() const {
  TrackingConfig t;
  t.inlier_floor = inlier_floor;
  t.diverged_px = diverged_px;
  t.lm.max_iterations = tracking_iterations;
  t.loss.delta = huber_delta;
  t.matching.cell_size = matching_cell_size;
  t.matching.neighborhood = matching_neighborhood;
  t.matching.max_distance = matching_distance;
  t.matching.frustum_near = frustum_near;
  t.matching.frustum_far = frustum_far;
  return t;
}

MappingConfig RunConfig::mapping_config() const {
  MappingConfig m;
  m.window_size = ba_window;
  m.frustum_near = frustum_near;
  m.frustum_far = frustum_far;
  m.sigma_px = sigma_px;
  m.depth_weighting = depth_weighting;
  m.cull_reproj_px = cull_reproj_px;
  m.lm.max_iterations = ba_iterations;
  m.loss.delta = huber_delta;
  return m;
}

LoopConfig RunConfig::loop_config() const {
  LoopConfig l;
  l.min_gap = loop_min_gap;
  l.max_embedding_distance = loop_max_embedding_distance;
  l.ransac_iterations = loop_ransac_iterations;
  l.inlier_px = loop_inlier_px;
  l.inlier_floor = loop_inlier_floor;
  l.seed = seed;
  l.match_max_distance = matching_distance;
  return l;
}

FusionConfig RunConfig::fusion_config() const {
  FusionConfig f;
  f.beta_cap = beta_cap;
  f.mode_feature_floor = mode_feature_floor;
  f.assumed_scene_depth = assumed_scene_depth;
  f.bilinear_splat = bilinear_splat;
  return f;
}

E3ctConfig RunConfig::e3ct_config(int height, int width) const {
  E3ctConfig e;
  e.alpha = decay_alpha;
  e.eta = decay_eta;
  e.median_radius = median_radius;
  e.binary_threshold = binary_threshold;
  e.height = height;
  e.width = width;
  return e;
}

namespace {

void from_json_into(const json& j, RunConfig& cfg) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("dataset", cfg.dataset);
  get("adapter", cfg.adapter);
  get("calibration", cfg.calibration);
  get("output", cfg.output);
  get("seed", cfg.seed);
  get("deterministic", cfg.deterministic);
  if (j.contains("align_left")) {
    const auto v = j.at("align_left").get<std::vector<double>>();
    cfg.align_left = Eigen::Vector2d(v.at(0), v.at(1));
  }
  if (j.contains("align_right")) {
    const auto v = j.at("align_right").get<std::vector<double>>();
    cfg.align_right = Eigen::Vector2d(v.at(0), v.at(1));
  }
  get("frustum_near", cfg.frustum_near);
  get("frustum_far", cfg.frustum_far);
  get("matching_cell_size", cfg.matching_cell_size);
  get("matching_neighborhood", cfg.matching_neighborhood);
  get("matching_distance", cfg.matching_distance);
  get("beta_cap", cfg.beta_cap);
  get("mode_feature_floor", cfg.mode_feature_floor);
  get("assumed_scene_depth", cfg.assumed_scene_depth);
  get("bilinear_splat", cfg.bilinear_splat);
  get("events_enabled", cfg.events_enabled);
  get("decay_alpha", cfg.decay_alpha);
  get("decay_eta", cfg.decay_eta);
  get("median_radius", cfg.median_radius);
  get("binary_threshold", cfg.binary_threshold);
  get("detector_backend", cfg.detector_backend);
  get("detector_model", cfg.detector_model);
  get("max_features", cfg.max_features);
  get("detector_min_score", cfg.detector_min_score);
  get("huber_delta", cfg.huber_delta);
  get("tracking_iterations", cfg.tracking_iterations);
  get("ba_iterations", cfg.ba_iterations);
  get("inlier_floor", cfg.inlier_floor);
  get("diverged_px", cfg.diverged_px);
  get("ba_window", cfg.ba_window);
  get("depth_weighting", cfg.depth_weighting);
  get("sigma_px", cfg.sigma_px);
  get("cull_reproj_px", cfg.cull_reproj_px);
  get("loop_enabled", cfg.loop_enabled);
  get("loop_min_gap", cfg.loop_min_gap);
  get("loop_max_embedding_distance", cfg.loop_max_embedding_distance);
  get("loop_ransac_iterations", cfg.loop_ransac_iterations);
  get("loop_inlier_px", cfg.loop_inlier_px);
  get("loop_inlier_floor", cfg.loop_inlier_floor);
}

json to_json_obj(const RunConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset;
  j["adapter"] = cfg.adapter;
  j["calibration"] = cfg.calibration;
  j["output"] = cfg.output;
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;
  if (cfg.align_left) j["align_left"] = {cfg.align_left->x(), cfg.align_left->y()};
  if (cfg.align_right) j["align_right"] = {cfg.align_right->x(), cfg.align_right->y()};
  j["frustum_near"] = cfg.frustum_near;
  j["frustum_far"] = cfg.frustum_far;
  j["matching_cell_size"] = cfg.matching_cell_size;
  j["matching_neighborhood"] = cfg.matching_neighborhood;
  j["matching_distance"] = cfg.matching_distance;
  j["beta_cap"] = cfg.beta_cap;
  j["mode_feature_floor"] = cfg.mode_feature_floor;
  j["assumed_scene_depth"] = cfg.assumed_scene_depth;
  j["bilinear_splat"] = cfg.bilinear_splat;
  j["events_enabled"] = cfg.events_enabled;
  j["decay_alpha"] = cfg.decay_alpha;
  j["decay_eta"] = cfg.decay_eta;
  j["median_radius"] = cfg.median_radius;
  j["binary_threshold"] = cfg.binary_threshold;
  j["detector_backend"] = cfg.detector_backend;
  j["detector_model"] = cfg.detector_model;
  j["max_features"] = cfg.max_features;
  j["detector_min_score"] = cfg.detector_min_score;
  j["huber_delta"] = cfg.huber_delta;
  j["tracking_iterations"] = cfg.tracking_iterations;
  j["ba_iterations"] = cfg.ba_iterations;
  j["inlier_floor"] = cfg.inlier_floor;
  j["diverged_px"] = cfg.diverged_px;
  j["ba_window"] = cfg.ba_window;
  j["depth_weighting"] = cfg.depth_weighting;
  j["sigma_px"] = cfg.sigma_px;
  j["cull_reproj_px"] = cfg.cull_reproj_px;
  j["loop_enabled"] = cfg.loop_enabled;
  j["loop_min_gap"] = cfg.loop_min_gap;
  j["loop_max_embedding_distance"] = cfg.loop_max_embedding_distance;
  j["loop_ransac_iterations"] = cfg.loop_ransac_iterations;
  j["loop_inlier_px"] = cfg.loop_inlier_px;
  j["loop_inlier_floor"] = cfg.loop_inlier_floor;
  return j;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("invalid config json " + path + ": " + e.what());
  }
  RunConfig cfg;
  try {
    from_json_into(j, cfg);
  } catch (const json::exception& e) {
    throw ConfigError("invalid config value in " + path + ": " + e.what());
  }
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config file: " + path);
  out << to_json_obj(cfg).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

std::string RunReport::to_json() const {
  json j;
  j["frames"] = frames;
  j["keyframes"] = keyframes;
  j["lost_frames"] = lost_frames;
  j["map_points"] = map_points;
  j["wall_seconds"] = wall_seconds;
  j["timing_ms"] = timing_ms;
  json logs = json::array();
  for (const auto& f : per_frame) {
    logs.push_back({{"index", f.index},
                    {"t_f", f.t_f},
                    {"raw_features", f.raw_features},
                    {"beta", f.beta},
                    {"mode", f.mode == FusionMode::DvsBiased ? "DVS_BIASED" : "APS_BIASED"},
                    {"matches", f.matches},
                    {"inliers", f.inliers},
                    {"lost", f.lost},
                    {"keyframe", f.keyframe},
                    {"window_events", f.window_events}});
  }
  j["per_frame"] = logs;
  json loop_arr = json::array();
  for (const auto& l : loops) {
    loop_arr.push_back({{"query_kf", l.query_kf},
                        {"match_kf", l.match_kf},
                        {"distance", l.embedding_distance},
                        {"inliers", l.inliers},
                        {"verified", l.verified}});
  }
  j["loops"] = loop_arr;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

struct MappingJob {
  int kf_id = -1;
  std::vector<StereoObservation> stereo;
};

template <typename T>
class JobQueue {
 public:
  void push(T job) {
    {
      std::lock_guard lock(mutex_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  bool pop(T* job) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !jobs_.empty(); });
    if (jobs_.empty()) return false;
    *job = std::move(jobs_.front());
    jobs_.pop_front();
    return true;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> jobs_;
  bool closed_ = false;
};

double median_scene_depth(const SharedMap& map, const Pose& T_cw, double fallback) {
  std::vector<double> depths;
  for (const MapPoint& pt : map.all_points()) {
    const double z = (T_cw * pt.position).z();
    if (z > 0.0) depths.push_back(z);
  }
  if (depths.empty()) return fallback;
  const std::size_t mid = depths.size() / 2;
  std::nth_element(depths.begin(), depths.begin() + mid, depths.end());
  return depths[mid];
}

struct FrameAnchor {
  double t_f = 0.0;
  int kf_id = -1;  // -1: absolute pose stored in rel
  Pose rel;        // T_cw(frame) * T_cw(kf)^-1 at anchoring time
};

class Pipeline {
 public:
  explicit Pipeline(const RunConfig& cfg)
      : cfg_(cfg),
        tracking_cfg_(cfg.tracking_config()),
        mapping_cfg_(cfg.mapping_config()),
        loop_cfg_(cfg.loop_config()),
        fusion_cfg_(cfg.fusion_config()) {}

  RunReport run() {
    const auto wall_start = std::chrono::steady_clock::now();
    fs::create_directories(cfg_.output);

    auto data = open_dataset(cfg_.adapter, cfg_.dataset);
    rig_ = cfg_.calibration.empty() ? data->calibration()
                                    : read_rig_calibration(cfg_.calibration);
    if (cfg_.align_left) rig_.align_left = *cfg_.align_left;
    if (cfg_.align_right) rig_.align_right = *cfg_.align_right;
    rig_.validate();

    BuiltinDetectorConfig det_cfg;
    det_cfg.max_features = cfg_.max_features;
    det_cfg.min_score = cfg_.detector_min_score;
    detector_ = make_detector(cfg_.detector_backend, cfg_.detector_model, det_cfg);

    std::vector<double> stamps;
    for (std::size_t i = 0; i < data->num_frames(); ++i) {
      stamps.push_back(data->frame_timestamp(i));
    }
    if (stamps.empty()) throw DataError("dataset has no frames");
    const SyncSchedule schedule = compute_fusion_timestamps(stamps, rig_.exposure_time);

    std::optional<EventStream> events_left, events_right;
    if (cfg_.events_enabled) {
      events_left.emplace(data->events(Side::Left));
      events_right.emplace(data->events(Side::Right));
    }
    const E3ctConfig e3ct_cfg = cfg_.e3ct_config(rig_.dvs_left.height, rig_.dvs_left.width);

    tracker_ = std::make_unique<Tracker>(tracking_cfg_, rig_);

    std::ofstream live(fs::path(cfg_.output) / "trajectory_live.tum");
    live << "# timestamp tx ty tz qx qy qz qw (pre-correction stream)\n";

    // background workers (default mode)
    std::unique_ptr<std::thread> map_worker, loop_worker;
    if (!cfg_.deterministic) {
      map_worker = std::make_unique<std::thread>([this] { mapping_worker(); });
      if (cfg_.loop_enabled) {
        loop_worker = std::make_unique<std::thread>([this] { loop_closure_worker(); });
      }
    }

    for (std::size_t k = 0; k < stamps.size(); ++k) {
      const double t_f = schedule.t_f[k];
      FrameLog log;
      log.index = k;
      log.t_f = t_f;

      apply_pending_correction();

      // 1. event tensors for this window
      E3CT tensor_left = E3CT::zero(e3ct_cfg.height, e3ct_cfg.width, t_f);
      E3CT tensor_right = tensor_left;
      if (cfg_.events_enabled && k > 0) {
        const auto t0 = std::chrono::steady_clock::now();
        const EventVolume vol_l = events_left->slice(schedule.t_f[k - 1], t_f);
        const EventVolume vol_r = events_right->slice(schedule.t_f[k - 1], t_f);
        log.window_events = vol_l.events.size() + vol_r.events.size();
        tensor_left = build_tensor(vol_l, e3ct_cfg, t_f);
        tensor_right = build_tensor(vol_r, e3ct_cfg, t_f);
        add_time("e3ct", t0);
      }

      // 2. fusion
      const auto t1 = std::chrono::steady_clock::now();
      const Grid frame_left = data->frame(k, Side::Left);
      const Grid frame_right = data->frame(k, Side::Right);
      const double lambda =
          median_scene_depth(map_, predict_pose(tracker_->state()), cfg_.assumed_scene_depth);
      const Grid d_left =
          collapse_to_intensity(warp_e3ct(tensor_left, rig_, Side::Left, lambda,
                                          cfg_.bilinear_splat));
      const Grid d_right =
          collapse_to_intensity(warp_e3ct(tensor_right, rig_, Side::Right, lambda,
                                          cfg_.bilinear_splat));

      const int raw_features = static_cast<int>(detector_->detect(frame_left).size());
      const double c_mean = frame_left.mean();
      const double c_max = frame_left.maxCoeff();
      double beta = 0.0;
      FusionMode mode = FusionMode::DvsBiased;
      if (c_max > 0.0) {
        std::tie(beta, mode) = select_beta(c_mean, c_max, raw_features, fusion_cfg_);
      } else {
        beta = fusion_cfg_.beta_cap;  // black frame: lean fully on events
      }
      FusionFrame fused;
      fused.timestamp = t_f;
      fused.beta = beta;
      fused.mode = mode;
      fused.image_left = fuse(frame_left, d_left, beta);
      fused.image_right = fuse(frame_right, d_right, beta);
      log.raw_features = raw_features;
      log.beta = beta;
      log.mode = mode;
      add_time("fusion", t1);

      // 3. detection on the fusion frames
      const auto t2 = std::chrono::steady_clock::now();
      std::vector<Feature> feats_left = detector_->detect(fused.image_left);
      std::vector<Feature> feats_right = detector_->detect(fused.image_right);
      add_time("detection", t2);

      // 4. tracking (bootstraps while the map is empty)
      const auto t3 = std::chrono::steady_clock::now();
      if (!bootstrapped_) {
        if (feats_left.size() >= 8 && feats_right.size() >= 8) {
          const int kf_id = tracker_->bootstrap(map_, t_f, std::move(feats_left), feats_right,
                                                mapping_cfg_);
          map_.set_embedding(kf_id, compute_embedding(map_.keyframe(kf_id).features));
          append_embedding(kf_id);
          bootstrapped_ = map_.num_points() > 0;
          log.keyframe = bootstrapped_;
          if (bootstrapped_) ++report_.keyframes;
        } else {
          log.lost = true;
          ++report_.lost_frames;
        }
        record_frame(log, t_f, live);
        add_time("tracking", t3);
        continue;
      }

      TrackResult result =
          tracker_->track(map_, t_f, std::move(feats_left), feats_right);
      add_time("tracking", t3);
      log.matches = result.matches;
      log.inliers = result.inliers;
      log.lost = result.status == TrackStatus::Lost;
      log.keyframe = result.promoted_keyframe;
      if (log.lost) ++report_.lost_frames;

      if (result.promoted_keyframe) {
        ++report_.keyframes;
        MappingJob job{result.keyframe_id, std::move(result.new_stereo)};
        if (cfg_.deterministic) {
          process_mapping(job);
          if (cfg_.loop_enabled) process_loop_closure(job.kf_id);
          apply_pending_correction();
        } else {
          mapping_queue_.push(std::move(job));
        }
      }
      record_frame(log, t_f, live);
    }

    mapping_queue_.close();
    if (map_worker) map_worker->join();
    loop_queue_.close();
    if (loop_worker) loop_worker->join();

    finalize(wall_start);
    return std::move(report_);
  }

 private:
  void add_time(const std::string& stage, std::chrono::steady_clock::time_point start) {
    const auto now = std::chrono::steady_clock::now();
    report_.timing_ms[stage] +=
        std::chrono::duration_cast<std::chrono::microseconds>(now - start).count() / 1000.0;
  }

  void record_frame(const FrameLog& log, double t_f, std::ofstream& live) {
    report_.per_frame.push_back(log);
    ++report_.frames;

    FrameAnchor anchor;
    anchor.t_f = t_f;
    const TrackingState& state = tracker_->state();
    if (state.has_pose && state.last_keyframe_id >= 0) {
      anchor.kf_id = state.last_keyframe_id;
      anchor.rel = state.current_pose * map_.keyframe(anchor.kf_id).T_cw.inverse();
    } else {
      anchor.kf_id = -1;
      anchor.rel = state.current_pose;
    }
    anchors_.push_back(anchor);

    const Pose T_wc = state.current_pose.inverse();
    char buf[256];
    const auto& t = T_wc.translation();
    const auto& q = T_wc.quaternion();
    std::snprintf(buf, sizeof(buf), "%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n", t_f,
                  t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    live << buf;
  }

  void append_embedding(int kf_id) {
    std::lock_guard lock(loop_db_mutex_);
    loop_db_.emplace_back(kf_id, map_.keyframe(kf_id).embedding);
  }

  void process_mapping(const MappingJob& job) {
    const auto t0 = std::chrono::steady_clock::now();
    insert_keyframe_points(map_, job.kf_id, job.stereo, rig_, mapping_cfg_);
    map_.set_embedding(job.kf_id, compute_embedding(map_.keyframe(job.kf_id).features));
    append_embedding(job.kf_id);
    local_bundle_adjust(map_, rig_, mapping_cfg_);
    cull_points(map_, rig_, mapping_cfg_);
    add_time("mapping", t0);
  }

  void process_loop_closure(int query_kf) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<int, Eigen::VectorXf>> db;
    {
      std::lock_guard lock(loop_db_mutex_);
      db = loop_db_;
    }
    const Keyframe query = map_.keyframe(query_kf);
    auto candidates = detect_loop(query_kf, query.embedding, db, loop_cfg_.min_gap,
                                  loop_cfg_.max_embedding_distance);
    if (!candidates.empty()) {
      LoopConfig vcfg = loop_cfg_;
      vcfg.seed = loop_cfg_.seed + static_cast<std::uint32_t>(query_kf);
      const LoopCandidate verified = verify_loop(map_, candidates.front(), rig_, vcfg);
      {
        std::lock_guard lock(report_mutex_);
        report_.loops.push_back(LoopEvent{verified.query_kf, verified.match_kf,
                                          verified.embedding_distance, verified.inliers,
                                          verified.verified});
      }
      if (verified.verified) {
        loop_edges_.push_back(verified);
        run_pose_graph();
      }
    }
    add_time("loop", t0);
  }

  void run_pose_graph() {
    PoseGraph graph = build_pose_graph(map_, {});
    std::map<int, int> node_of;
    for (std::size_t n = 0; n < graph.node_ids.size(); ++n) node_of[graph.node_ids[n]] = int(n);
    for (const LoopCandidate& c : loop_edges_) {
      PoseGraphEdge e;
      e.i = node_of.at(c.match_kf);
      e.j = node_of.at(c.query_kf);
      e.measurement = c.relative_pose;
      e.weight = static_cast<double>(c.inliers);
      e.kind = EdgeKind::Loop;
      graph.edges.push_back(e);
    }

    std::map<int, Pose> old_poses;
    for (std::size_t n = 0; n < graph.node_ids.size(); ++n) {
      old_poses[graph.node_ids[n]] = graph.nodes[n].inverse();  // T_cw before correction
    }
    const std::vector<Pose> corrected = optimize_pose_graph(graph, loop_cfg_.graph_lm);
    apply_pose_graph_correction(map_, graph, corrected);

    std::lock_guard lock(correction_mutex_);
    correction_pending_ = true;
    correction_old_ = old_poses;
  }

  // Remaps the tracker's current pose onto the corrected keyframes and drops
  // the motion model (once per loop commit).
  void apply_pending_correction() {
    std::lock_guard lock(correction_mutex_);
    if (!correction_pending_) return;
    correction_pending_ = false;
    TrackingState& state = tracker_->state();
    const auto it = correction_old_.find(state.last_keyframe_id);
    if (state.has_pose && it != correction_old_.end()) {
      const Pose new_T_cw = map_.keyframe(state.last_keyframe_id).T_cw;
      state.current_pose = state.current_pose * it->second.inverse() * new_T_cw;
    }
    invalidate_motion(state);
  }

  void mapping_worker() {
    MappingJob job;
    while (mapping_queue_.pop(&job)) {
      process_mapping(job);
      if (cfg_.loop_enabled) loop_queue_.push(job.kf_id);
    }
  }

  void loop_closure_worker() {
    int kf_id = -1;
    while (loop_queue_.pop(&kf_id)) {
      process_loop_closure(kf_id);
    }
  }

  void finalize(std::chrono::steady_clock::time_point wall_start) {
    // Rebuild the per-frame trajectory against the corrected keyframe poses.
    for (const FrameAnchor& a : anchors_) {
      const Pose T_cw = a.kf_id >= 0 ? Pose(a.rel * map_.keyframe(a.kf_id).T_cw) : a.rel;
      report_.trajectory.push_back(TrajectoryRecord{a.t_f, T_cw.inverse()});
    }
    report_.map_points = map_.num_points();
    report_.wall_seconds = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - wall_start)
                               .count() /
                           1000.0;

    write_tum(report_.trajectory, (fs::path(cfg_.output) / "trajectory.tum").string());
    map_.dump((fs::path(cfg_.output) / "map.txt").string());

    std::ofstream loops(fs::path(cfg_.output) / "loops.csv");
    loops << "query_kf,match_kf,distance,inliers,verified\n";
    for (const auto& l : report_.loops) {
      loops << l.query_kf << "," << l.match_kf << "," << l.embedding_distance << "," << l.inliers
            << "," << (l.verified ? 1 : 0) << "\n";
    }
    std::ofstream rep(fs::path(cfg_.output) / "report.json");
    rep << report_.to_json() << "\n";
  }

  RunConfig cfg_;
  TrackingConfig tracking_cfg_;
  MappingConfig mapping_cfg_;
  LoopConfig loop_cfg_;
  FusionConfig fusion_cfg_;

  RigCalibration rig_;
  std::unique_ptr<FeatureDetector> detector_;
  std::unique_ptr<Tracker> tracker_;
  SharedMap map_;
  bool bootstrapped_ = false;

  std::vector<FrameAnchor> anchors_;
  RunReport report_;

  JobQueue<MappingJob> mapping_queue_;
  JobQueue<int> loop_queue_;
  std::mutex loop_db_mutex_;
  std::vector<std::pair<int, Eigen::VectorXf>> loop_db_;
  std::vector<LoopCandidate> loop_edges_;  // loop worker only
  std::mutex report_mutex_;

  std::mutex correction_mutex_;
  bool correction_pending_ = false;
  std::map<int, Pose> correction_old_;
};

}  // namespace

RunReport run_pipeline(const RunConfig& cfg) {
  Pipeline pipeline(cfg);
  return pipeline.run();
}

// ---------------------------------------------------------------------------
// Window-width ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation_windows(const RunConfig& cfg,
                                              const std::vector<double>& widths_ms,
                                              bool constant_count, std::size_t target_count) {
  if (widths_ms.empty() && !constant_count) {
    throw ConfigError("ablation needs at least one window width");
  }
  for (double w : widths_ms) {
    if (!(w > 0.0)) throw ConfigError("ablation window widths must be positive");
  }
  if (constant_count && target_count == 0) {
    throw ConfigError("constant-count ablation needs a positive event count");
  }

  auto data = open_dataset(cfg.adapter, cfg.dataset);
  RigCalibration rig = data->calibration();
  std::vector<double> stamps;
  for (std::size_t i = 0; i < data->num_frames(); ++i) stamps.push_back(data->frame_timestamp(i));
  const SyncSchedule schedule = compute_fusion_timestamps(stamps, rig.exposure_time);
  const std::vector<Event> events = data->events(Side::Left);
  const E3ctConfig e3ct_cfg = cfg.e3ct_config(rig.dvs_left.height, rig.dvs_left.width);
  fs::create_directories(cfg.output);

  std::vector<AblationRow> rows;
  auto snapshot = [&](const EventVolume& volume, double t_f, const std::string& name) {
    const E3CT tensor = build_tensor(volume, e3ct_cfg, t_f);
    const std::string path = (fs::path(cfg.output) / name).string();
    write_pgm(collapse_to_intensity(tensor), path);
    return path;
  };

  if (constant_count) {
    AblationRow row;
    row.width_ms = -1.0;  // marker: constant-count mode
    for (std::size_t k = 1; k < schedule.t_f.size(); ++k) {
      const std::uint64_t end_ns = seconds_to_ns(schedule.t_f[k]);
      auto hi = std::lower_bound(events.begin(), events.end(), end_ns,
                                 [](const Event& e, std::uint64_t t) { return e.t < t; });
      const std::size_t have = static_cast<std::size_t>(hi - events.begin());
      const std::size_t take = std::min(target_count, have);
      row.counts.push_back(take);
      if (k == schedule.t_f.size() / 2 && take > 0) {
        EventVolume volume;
        volume.events.assign(hi - take, hi);
        volume.window_start = volume.events.front().t;
        volume.window_end = end_ns;
        row.snapshot_path = snapshot(volume, schedule.t_f[k], "ablation_constant_count.pgm");
      }
    }
    rows.push_back(std::move(row));
  }

  // Windows of neighbouring frames overlap once the width exceeds the frame
  // gap, so volumes are cut straight out of the sorted event list.
  auto window_volume = [&](double t0, double t1) {
    EventVolume volume;
    volume.window_start = seconds_to_ns(std::max(t0, 0.0));
    volume.window_end = seconds_to_ns(t1);
    auto lo = std::lower_bound(events.begin(), events.end(), volume.window_start,
                               [](const Event& e, std::uint64_t t) { return e.t < t; });
    auto hi = std::lower_bound(lo, events.end(), volume.window_end,
                               [](const Event& e, std::uint64_t t) { return e.t < t; });
    volume.events.assign(lo, hi);
    return volume;
  };

  for (double width_ms : widths_ms) {
    const double width = width_ms / 1000.0;
    AblationRow row;
    row.width_ms = width_ms;
    for (std::size_t k = 1; k < schedule.t_f.size(); ++k) {
      const double t1 = schedule.t_f[k];
      EventVolume volume = window_volume(t1 - width, t1);
      row.counts.push_back(volume.events.size());
      if (k == schedule.t_f.size() / 2) {
        char name[64];
        std::snprintf(name, sizeof(name), "ablation_w%06.1fms.pgm", width_ms);
        row.snapshot_path = snapshot(volume, t1, name);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace evptam
