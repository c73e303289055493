#ifndef EVPTAM_FUSION_HPP
#define EVPTAM_FUSION_HPP

#include <Eigen/Core>
#include <vector>

#include "evptam/events.hpp"
#include "evptam/geometry.hpp"

// Spatial registration of event tensors into the frame-camera image plane,
// offline alignment-offset estimation, and the beta-weighted events-frames
// cross-dissolve with APS/DVS mode switching.

namespace evptam {

enum class FusionMode { ApsBiased, DvsBiased };

struct FusionConfig {
  double beta_cap = 0.3;
  int mode_feature_floor = 50;       // frame features below this -> DVS mode
  double assumed_scene_depth = 6.0;  // meters, fallback when the map is empty
  bool bilinear_splat = false;       // nearest-pixel splatting by default
};

struct FusionFrame {
  Grid image_left, image_right;  // blended intensities in [0, 1]
  double timestamp = 0.0;
  double beta = 0.0;
  FusionMode mode = FusionMode::ApsBiased;
};

// Registers each event-camera pixel into the frame camera by lifting it to
// depth lambda, applying the event-to-frame extrinsic, reprojecting with the
// recomputed target depth, and adding the per-side constant alignment offset.
// Channel values splat to the nearest target pixel (additive) or, when
// bilinear is set, to the four surrounding pixels; out-of-bounds targets are
// dropped.
E3CT warp_e3ct(const E3CT& tensor, const RigCalibration& rig, Side side, double depth,
               bool bilinear = false);

// Channel mean collapsed to a single intensity grid, clamped to [0, 1].
Grid collapse_to_intensity(const E3CT& tensor);

// Constant 2D offset minimizing sum ||frame_px - (warped_px + delta)||^2 over
// matched pixel pairs, i.e. the mean difference. Needs >= 10 matches.
struct AlignmentEstimate {
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();
  double rms_residual = 0.0;  // px, after applying the offset
  int num_matches = 0;
};
AlignmentEstimate calibrate_alignment(const std::vector<Eigen::Vector2d>& frame_px,
                                      const std::vector<Eigen::Vector2d>& warped_px);

// Chirp-shaped blend weight from the frame statistics: the max rule in
// DVS-biased mode (frame feature detection failed), the min rule otherwise;
// always capped at beta_cap. Requires intensity_max > 0.
std::pair<double, FusionMode> select_beta(double intensity_mean, double intensity_max,
                                          int frame_feature_count, const FusionConfig& cfg);

// Pixel-wise cross-dissolve (1 - beta) * C + beta * D.
Grid fuse(const Grid& frame, const Grid& events, double beta);

}  // namespace evptam

#endif  // EVPTAM_FUSION_HPP
