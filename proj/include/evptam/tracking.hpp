#ifndef EVPTAM_TRACKING_HPP
#define EVPTAM_TRACKING_HPP

#include <optional>
#include <vector>

#include "evptam/fusion.hpp"
#include "evptam/mapping.hpp"

// Per-frame pose estimation: predict, project map points, match, refine,
// and decide keyframe promotion.

namespace evptam {

struct TrackingConfig {
  int min_matches = 4;       // minimal match count for refinement
  int inlier_floor = 10;     // below this the frame counts as tracking-lost
  double diverged_px = 5.0;  // mean reprojection ceiling after refinement
  LMSettings lm{.max_iterations = 10};
  RobustLoss loss{.delta = 1.0};
  MatchingParams matching;
};

struct TrackingState {
  Pose current_pose;  // T_cw of the latest tracked frame
  Pose last_delta;    // constant-velocity increment: T_cw(k) * T_cw(k-1)^-1
  bool has_pose = false;
  bool has_motion = false;
  int last_keyframe_id = -1;
  int tracked_count = 0;
  int reference_count = 0;
};

// Previous pose composed with the last inter-frame increment; identity
// motion before any increment is known.
Pose predict_pose(const TrackingState& state);

// Resets the motion model (used once after a loop-closure commit).
void invalidate_motion(TrackingState& state);

// True iff tracked < 0.9 * reference, evaluated exactly in integers.
bool keyframe_decision(int tracked_count, int reference_count);

struct PoseMatch {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // world, held constant
  Eigen::Vector2d measurement = Eigen::Vector2d::Zero();
};

struct RefineResult {
  Pose pose;
  std::vector<char> inlier;  // per input match, robust weight >= 0.5
  int inlier_count = 0;
  double mean_reproj = 0.0;  // px, inliers only
  SolveReport solve;
};

// Minimizes the robust reprojection cost over the pose only. Throws
// InsufficientMatches below min_matches and DivergedPose when the final mean
// reprojection error exceeds diverged_px.
RefineResult refine_pose(const std::vector<PoseMatch>& matches, const Pose& prior,
                         const PinholeCamera& cam, const TrackingConfig& cfg);

enum class TrackStatus { Ok, Lost };

struct TrackResult {
  TrackStatus status = TrackStatus::Ok;
  Pose pose;                      // T_cw after refinement
  int matches = 0, inliers = 0;
  bool promoted_keyframe = false;
  int keyframe_id = -1;
  std::vector<StereoObservation> new_stereo;  // unmatched pairs for mapping
};

// One tracking step against the shared map. Detects nothing itself: the
// caller supplies the features of the current fusion frame (and the right
// features only when a keyframe may be promoted, via the callback).
class Tracker {
 public:
  Tracker(const TrackingConfig& cfg, const RigCalibration& rig) : cfg_(cfg), rig_(rig) {}

  // Initializes the map from the first stereo fusion frame: the world frame
  // is the left camera at frame 0. Returns the bootstrap keyframe id.
  int bootstrap(SharedMap& map, double timestamp, std::vector<Feature> left_features,
                const std::vector<Feature>& right_features, const MappingConfig& mapping_cfg);

  // Tracks one frame. right_features is consulted only on keyframe
  // promotion; new map points from its stereo matches are created via
  // insert_keyframe_points by the caller (mapping worker).
  TrackResult track(SharedMap& map, double timestamp, std::vector<Feature> left_features,
                    const std::vector<Feature>& right_features);

  const TrackingState& state() const { return state_; }
  TrackingState& state() { return state_; }

 private:
  TrackingConfig cfg_;
  RigCalibration rig_;
  TrackingState state_;
};

}  // namespace evptam

#endif  // EVPTAM_TRACKING_HPP
