#ifndef EVPTAM_MAPPING_HPP
#define EVPTAM_MAPPING_HPP

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "evptam/features.hpp"
#include "evptam/geometry.hpp"
#include "evptam/solver.hpp"

// Keyframe/map-point bookkeeping shared by the tracking, mapping and
// loop-closing workers, plus sliding-window local bundle adjustment.

namespace evptam {

struct Observation {
  int keyframe_id = 0;
  Eigen::Vector2d px = Eigen::Vector2d::Zero();  // left-camera measurement
};

struct MapPoint {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world
  Eigen::VectorXf descriptor;  // representative: most recent observation
  std::vector<Observation> observations;
  double depth_uncertainty = 0.0;  // sigma_z from stereo geometry, m
  double intensity = 0.8;          // grayscale for map dumps
};

struct Keyframe {
  int id = 0;
  Pose T_cw;  // world -> left camera
  double timestamp = 0.0;
  std::vector<Feature> features;
  std::vector<int> feature_point;  // map point id per feature, -1 when free
  Eigen::VectorXf embedding;       // unit mean descriptor (loop closure)
};

// ---------------------------------------------------------------------------
// SharedMap: a commit-snapshot shared resource. Readers (tracking, loop
// detection) copy consistent snapshots under a shared lock; mapping and loop
// closure mutate a private working copy and commit atomically under the
// exclusive lock. All public methods lock internally.
// ---------------------------------------------------------------------------

class SharedMap {
 public:
  int add_keyframe(Keyframe kf);
  int add_point(MapPoint point);
  void add_observation(int point_id, int keyframe_id, const Eigen::Vector2d& px,
                       const Eigen::VectorXf& descriptor);
  void link_feature(int keyframe_id, int feature_index, int point_id);
  void remove_point(int point_id);

  std::size_t num_keyframes() const;
  std::size_t num_points() const;
  Keyframe keyframe(int id) const;
  MapPoint point(int id) const;
  std::vector<int> keyframe_ids() const;      // insertion order
  std::vector<int> point_ids() const;
  std::vector<MapPoint> all_points() const;   // snapshot
  std::vector<Keyframe> all_keyframes() const;

  // covisibility: keyframe pairs with their shared-point counts
  std::vector<std::tuple<int, int, int>> covisibility_edges() const;

  // number of map-point observations recorded in one keyframe
  int observation_count(int keyframe_id) const;
  void set_embedding(int keyframe_id, const Eigen::VectorXf& embedding);

  void set_keyframe_pose(int id, const Pose& T_cw);
  void set_point_position(int id, const Eigen::Vector3d& x);

  // Atomic multi-object commit used by BA and pose-graph corrections.
  void commit(const std::map<int, Pose>& keyframe_poses,
              const std::map<int, Eigen::Vector3d>& point_positions);

  // Checks referential integrity: every observation references a live
  // keyframe and point, covisibility symmetric. Returns a description of the
  // first violation, or empty.
  std::string check_integrity() const;

  // Text dump: "x y z r g b" per point line, plus the keyframe trajectory as
  // comment-prefixed metadata at the end.
  void dump(const std::string& path) const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<int, Keyframe> keyframes_;
  std::map<int, MapPoint> points_;
  int next_keyframe_id_ = 0;
  int next_point_id_ = 0;
};

// ---------------------------------------------------------------------------
// Mapping operations
// ---------------------------------------------------------------------------

struct MappingConfig {
  int window_size = 10;  // keyframes in the BA window
  double frustum_near = 0.1, frustum_far = 30.0;
  double sigma_px = 1.0;            // stereo matching pixel noise
  bool depth_weighting = true;      // inverse-variance measurement weights
  double cull_reproj_px = 3.0;      // mean reprojection ceiling for culling
  LMSettings lm{.max_iterations = 30};
  RobustLoss loss{.delta = 1.0};
};

struct StereoObservation {
  int left_feature = 0;  // index into the keyframe's feature list
  Eigen::Vector2d right_px = Eigen::Vector2d::Zero();
};

// Triangulates unmatched stereo pairs of a freshly inserted keyframe into new
// map points; depths outside the frustum are rejected. depth_uncertainty is
// sigma_z = z^2 * sigma_px / (f * b).
std::vector<int> insert_keyframe_points(SharedMap& map, int keyframe_id,
                                        const std::vector<StereoObservation>& stereo,
                                        const RigCalibration& rig, const MappingConfig& cfg);

struct BAReport {
  bool ran = false;        // false when the window was empty/degenerate
  bool committed = false;  // false when the solver failed (map unmodified)
  SolveReport solve;
  double rms_reproj_before = 0.0;
  double rms_reproj_after = 0.0;
  int num_poses = 0, num_points = 0, num_residuals = 0;
};

// Sliding-window BA over the last `window_size` keyframes and every point
// they observe; the oldest windowed pose is held fixed, out-of-window
// observations are excluded. Transactional: on solver failure the map is
// left unmodified.
BAReport local_bundle_adjust(SharedMap& map, const RigCalibration& rig,
                             const MappingConfig& cfg);

// Removes points with fewer than 2 observations once their keyframe left the
// window, and points whose mean reprojection error exceeds the ceiling.
std::vector<int> cull_points(SharedMap& map, const RigCalibration& rig,
                             const MappingConfig& cfg);

// 2-vector reprojection residual z - project(X) with analytic Jacobians in
// the pose tangent (left-composed) and the point; shared by tracking, BA and
// its tests.
bool reprojection_residual(const PinholeCamera& cam, const Pose& T_cw,
                           const Eigen::Vector3d& point, const Eigen::Vector2d& measurement,
                           Eigen::Vector2d* residual,
                           Eigen::Matrix<double, 2, 6>* j_pose = nullptr,
                           Eigen::Matrix<double, 2, 3>* j_point = nullptr);

}  // namespace evptam

#endif  // EVPTAM_MAPPING_HPP
