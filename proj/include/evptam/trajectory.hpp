#ifndef EVPTAM_TRAJECTORY_HPP
#define EVPTAM_TRAJECTORY_HPP

#include <string>
#include <vector>

#include "evptam/geometry.hpp"

// Trajectory serialization and ATE/RPE evaluation with rigid or similarity
// alignment. Poses in trajectory files are camera-in-world.

namespace evptam {

struct TrajectoryRecord {
  double timestamp = 0.0;  // seconds
  Pose pose;
};

using Trajectory = std::vector<TrajectoryRecord>;

// Lines `timestamp tx ty tz qx qy qz qw`; comment lines start with '#'.
Trajectory read_tum(const std::string& path);
void write_tum(const Trajectory& trajectory, const std::string& path);

enum class AlignMode { SE3, Sim3 };

struct Alignment {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
};

// Closed-form least-squares similarity (or rigid, scale fixed to 1) mapping
// the source points onto the targets. Needs >= 3 non-collinear pairs; throws
// DegenerateConfiguration otherwise.
Alignment umeyama_align(const std::vector<Eigen::Vector3d>& source,
                        const std::vector<Eigen::Vector3d>& target, AlignMode mode);

struct AssociatedPair {
  std::size_t est_index = 0, gt_index = 0;
};

// Nearest-timestamp association within max_dt seconds; each ground-truth
// record is used at most once. Throws NoAssociations when empty.
std::vector<AssociatedPair> associate(const Trajectory& estimate, const Trajectory& ground_truth,
                                      double max_dt = 0.010);

struct AteResult {
  double rmse = 0.0;          // m
  double mean = 0.0, max = 0.0;
  std::size_t n_pairs = 0;
  Alignment alignment;
};

// RMSE of translational residuals after aligning the associated estimate
// positions onto the ground truth.
AteResult ate(const Trajectory& estimate, const Trajectory& ground_truth, AlignMode mode,
              double max_dt = 0.010);

struct RpeResult {
  double rmse = 0.0;  // m per delta
  double mean = 0.0, stddev = 0.0, max = 0.0;
  std::size_t n_pairs = 0;
};

// RMSE of relative-motion translational residuals over the given frame delta.
RpeResult rpe(const Trajectory& estimate, const Trajectory& ground_truth, std::size_t delta,
              double max_dt = 0.010);

// Path length of a trajectory (sum of consecutive position distances).
double trajectory_length(const Trajectory& trajectory);

}  // namespace evptam

#endif  // EVPTAM_TRAJECTORY_HPP
