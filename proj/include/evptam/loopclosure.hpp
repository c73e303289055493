#ifndef EVPTAM_LOOPCLOSURE_HPP
#define EVPTAM_LOOPCLOSURE_HPP

#include <cstdint>
#include <vector>

#include "evptam/mapping.hpp"

// Mean-descriptor keyframe embeddings, loop candidate detection, RANSAC
// geometric verification and pose-graph optimization.

namespace evptam {

struct LoopConfig {
  int min_gap = 30;                     // keyframes between query and candidate
  double max_embedding_distance = 0.3;  // unit-vector L2
  int ransac_iterations = 200;
  double inlier_px = 2.0;
  int inlier_floor = 15;
  std::uint32_t seed = 42;
  double match_max_distance = 0.8;  // descriptor gate for 3D-2D correspondences
  LMSettings graph_lm{.max_iterations = 30};
};

struct LoopCandidate {
  int query_kf = -1, match_kf = -1;
  double embedding_distance = 0.0;
  bool verified = false;
  int inliers = 0;
  Pose relative_pose;  // query camera expressed in the match camera frame
                       // (T_wc_match^-1 * T_wc_query), set on verification
};

// Unit-normalized arithmetic mean of the feature descriptors. Throws
// NoFeatures for an empty list.
Eigen::VectorXf compute_embedding(const std::vector<Feature>& features);

// Keyframes whose embedding is within max_distance of the query and at least
// min_gap ids older, sorted by ascending distance.
std::vector<LoopCandidate> detect_loop(int query_kf, const Eigen::VectorXf& query_embedding,
                                       const std::vector<std::pair<int, Eigen::VectorXf>>& database,
                                       int min_gap, double max_distance);

// RANSAC over 3D-2D correspondences between the match keyframe's map points
// and the query keyframe's features; verified iff the inlier-refined pose
// gathers at least inlier_floor inliers. Unverified candidates are returned
// with verified = false.
LoopCandidate verify_loop(const SharedMap& map, LoopCandidate candidate,
                          const RigCalibration& rig, const LoopConfig& cfg);

// ---------------------------------------------------------------------------
// Pose graph over camera-in-world keyframe poses.
// ---------------------------------------------------------------------------

enum class EdgeKind { Odometry, Loop };

struct PoseGraphEdge {
  int i = 0, j = 0;  // node indices
  Pose measurement;  // pose of j expressed in i's frame: T_i^-1 * T_j
  double weight = 1.0;
  EdgeKind kind = EdgeKind::Odometry;
};

struct PoseGraph {
  std::vector<int> node_ids;  // keyframe ids, node 0 is the gauge
  std::vector<Pose> nodes;    // T_wc per node
  std::vector<PoseGraphEdge> edges;
};

// Minimizes sum_e w_e * ||log(meas^-1 * T_i^-1 * T_j)||^2 with node 0 fixed.
// Returns the corrected node poses; the input graph is not modified.
std::vector<Pose> optimize_pose_graph(const PoseGraph& graph, const LMSettings& settings);

// Builds the odometry chain over all keyframes (consecutive relative poses
// measured at their current values) plus the given loop edges.
PoseGraph build_pose_graph(const SharedMap& map, const std::vector<PoseGraphEdge>& loop_edges);

// Applies corrected node poses: keyframes take their new pose, every map
// point moves rigidly with the keyframe of its first observation.
void apply_pose_graph_correction(SharedMap& map, const PoseGraph& graph,
                                 const std::vector<Pose>& corrected);

}  // namespace evptam

#endif  // EVPTAM_LOOPCLOSURE_HPP
