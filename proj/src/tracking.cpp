#include "evptam/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace evptam {

Pose predict_pose(const TrackingState& state) {
  if (!state.has_motion) return state.current_pose;
  return state.last_delta * state.current_pose;
}

void invalidate_motion(TrackingState& state) {
  state.has_motion = false;
  state.last_delta = Pose::Identity();
}

bool keyframe_decision(int tracked_count, int reference_count) {
  if (reference_count <= 0) throw ConfigError("keyframe decision needs a positive reference");
  return 10 * tracked_count < 9 * reference_count;
}

RefineResult refine_pose(const std::vector<PoseMatch>& matches, const Pose& prior,
                         const PinholeCamera& cam, const TrackingConfig& cfg) {
  if (static_cast<int>(matches.size()) < cfg.min_matches) {
    throw InsufficientMatches("pose refinement needs at least " +
                              std::to_string(cfg.min_matches) + " matches");
  }

  Problem problem;
  const int pose_id = problem.add_pose(prior);
  for (const auto& m : matches) {
    const Eigen::Vector3d x = m.point;
    const Eigen::Vector2d z = m.measurement;
    problem.add_residual(2, {Problem::pose_ref(pose_id)},
                         [cam, x, z, pose_id](const Problem& p, Eigen::VectorXd& r,
                                              std::vector<Eigen::MatrixXd>* jac) {
                           Eigen::Vector2d res;
                           Eigen::Matrix<double, 2, 6> jp;
                           if (!reprojection_residual(cam, p.pose(pose_id), x, z, &res,
                                                      jac ? &jp : nullptr)) {
                             return false;
                           }
                           r = res;
                           if (jac) (*jac)[0] = jp;
                           return true;
                         });
  }

  RefineResult result;
  result.solve = lm_minimize(problem, cfg.loss, cfg.lm);
  result.pose = problem.pose(pose_id);

  result.inlier.assign(matches.size(), 0);
  double reproj_sum = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    Eigen::Vector2d r;
    if (!reprojection_residual(cam, result.pose, matches[i].point, matches[i].measurement, &r)) {
      continue;  // behind the camera: outlier
    }
    const double w = huber(r.squaredNorm(), cfg.loss.delta).second;
    if (w >= 0.5) {
      result.inlier[i] = 1;
      ++result.inlier_count;
      reproj_sum += r.norm();
    }
  }
  result.mean_reproj =
      result.inlier_count > 0 ? reproj_sum / result.inlier_count : cfg.diverged_px * 2.0;
  if (result.mean_reproj > cfg.diverged_px) {
    throw DivergedPose("mean reprojection error " + std::to_string(result.mean_reproj) +
                       " px above ceiling");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Tracker
// ---------------------------------------------------------------------------

namespace {

// Left features without any map-point match, stereo-matched to the right
// features; these become triangulation candidates.
std::vector<StereoObservation> remaining_stereo(const std::vector<Feature>& left,
                                                const std::vector<Feature>& right,
                                                const std::set<int>& taken,
                                                const MatchingParams& params) {
  std::vector<Feature> free_left;
  std::vector<int> free_index;
  for (std::size_t i = 0; i < left.size(); ++i) {
    if (!taken.count(static_cast<int>(i))) {
      free_left.push_back(left[i]);
      free_index.push_back(static_cast<int>(i));
    }
  }
  std::vector<StereoObservation> stereo;
  for (const Match& m : match_stereo(free_left, right, params)) {
    stereo.push_back(StereoObservation{free_index[m.a], right[m.b].px});
  }
  return stereo;
}

}  // namespace

int Tracker::bootstrap(SharedMap& map, double timestamp, std::vector<Feature> left_features,
                       const std::vector<Feature>& right_features,
                       const MappingConfig& mapping_cfg) {
  Keyframe kf;
  kf.T_cw = Pose::Identity();  // world frame = left camera at frame 0
  kf.timestamp = timestamp;
  kf.features = std::move(left_features);
  kf.feature_point.assign(kf.features.size(), -1);
  const int kf_id = map.add_keyframe(std::move(kf));

  const Keyframe stored = map.keyframe(kf_id);
  const auto stereo = remaining_stereo(stored.features, right_features, {}, cfg_.matching);
  const auto created = insert_keyframe_points(map, kf_id, stereo, rig_, mapping_cfg);

  state_.current_pose = Pose::Identity();
  state_.has_pose = true;
  state_.has_motion = false;
  state_.last_keyframe_id = kf_id;
  state_.reference_count = static_cast<int>(created.size());
  state_.tracked_count = state_.reference_count;
  return kf_id;
}

TrackResult Tracker::track(SharedMap& map, double timestamp,
                           std::vector<Feature> left_features,
                           const std::vector<Feature>& right_features) {
  TrackResult result;
  result.pose = state_.current_pose;

  // The reference count may grow after promotion once mapping triangulates
  // the keyframe's stereo features; always read the committed value.
  if (state_.last_keyframe_id >= 0) {
    state_.reference_count = map.observation_count(state_.last_keyframe_id);
  }

  const Pose predicted = predict_pose(state_);
  const Pose previous = state_.current_pose;
  const PinholeCamera& cam = rig_.cam_left;

  // Project the map into the anticipated view.
  std::vector<ProjectedPoint> projected;
  std::vector<Eigen::VectorXf> descriptors;
  std::vector<Eigen::Vector3d> positions;
  for (const MapPoint& pt : map.all_points()) {
    Eigen::Vector2d px;
    double depth = 0.0;
    if (!try_project(cam, predicted, pt.position, &px, &depth)) continue;
    if (!cam.contains(px)) continue;
    ProjectedPoint proj;
    proj.point_index = pt.id;
    proj.predicted_px = px;
    proj.depth = depth;
    Eigen::Vector2d prev_px;
    proj.previous_px = try_project(cam, previous, pt.position, &prev_px) ? prev_px : px;
    projected.push_back(proj);
    descriptors.push_back(pt.descriptor);
    positions.push_back(pt.position);
  }

  const std::vector<Match> matches =
      match_temporal(projected, descriptors, left_features, cfg_.matching);
  result.matches = static_cast<int>(matches.size());

  if (result.matches < cfg_.min_matches) {
    result.status = TrackStatus::Lost;  // hold pose, retry next frame
    return result;
  }

  std::vector<PoseMatch> pose_matches;
  pose_matches.reserve(matches.size());
  for (const Match& m : matches) {
    pose_matches.push_back(PoseMatch{positions[m.a], left_features[m.b].px});
  }

  RefineResult refined;
  try {
    refined = refine_pose(pose_matches, predicted, cam, cfg_);
  } catch (const DivergedPose&) {
    result.status = TrackStatus::Lost;
    return result;
  }

  result.inliers = refined.inlier_count;
  if (result.inliers < cfg_.inlier_floor) {
    result.status = TrackStatus::Lost;
    return result;
  }

  // Commit the new pose and the constant-velocity increment.
  result.pose = refined.pose;
  if (state_.has_pose) {
    state_.last_delta = refined.pose * previous.inverse();
    state_.has_motion = true;
  }
  state_.current_pose = refined.pose;
  state_.has_pose = true;
  state_.tracked_count = result.inliers;

  if (state_.reference_count > 0 &&
      keyframe_decision(state_.tracked_count, state_.reference_count)) {
    Keyframe kf;
    kf.T_cw = refined.pose;
    kf.timestamp = timestamp;
    kf.features = std::move(left_features);
    kf.feature_point.assign(kf.features.size(), -1);
    const int kf_id = map.add_keyframe(std::move(kf));

    // Re-observe the inlier map points in the new keyframe.
    std::set<int> taken;
    int observed = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
      taken.insert(matches[i].b);
      if (!refined.inlier[i]) continue;
      const int point_id = projected[matches[i].a].point_index;
      const Feature& f = map.keyframe(kf_id).features[matches[i].b];
      map.add_observation(point_id, kf_id, f.px, f.descriptor);
      map.link_feature(kf_id, matches[i].b, point_id);
      ++observed;
    }

    result.promoted_keyframe = true;
    result.keyframe_id = kf_id;
    result.new_stereo =
        remaining_stereo(map.keyframe(kf_id).features, right_features, taken, cfg_.matching);

    state_.last_keyframe_id = kf_id;
    state_.reference_count = observed;  // new points are added by mapping
    state_.tracked_count = observed;
  }
  return result;
}

}  // namespace evptam
