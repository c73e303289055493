#ifndef EVPTAM_FEATURES_HPP
#define EVPTAM_FEATURES_HPP

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "evptam/events.hpp"
#include "evptam/geometry.hpp"

// Pluggable keypoint detection/description and grid-gated matching.

namespace evptam {

struct Feature {
  Eigen::Vector2d px = Eigen::Vector2d::Zero();
  Eigen::VectorXf descriptor;  // unit norm
  double score = 0.0;
};

struct MatchingParams {
  double cell_size = 15.0;     // px
  double neighborhood = 2.0;   // cells; spatial gate radius = neighborhood * cell_size
  double max_distance = 0.8;   // descriptor-space L2 gate (unit vectors)
  double frustum_near = 0.1;   // m
  double frustum_far = 30.0;   // m
};

struct Match {
  int a = 0, b = 0;       // indices into the two feature lists
  double distance = 0.0;  // descriptor L2 distance
};

// ---------------------------------------------------------------------------
// Detector interface. Implementations must be deterministic for a fixed
// input and return features sorted by score descending, descriptors
// unit-normalized.
// ---------------------------------------------------------------------------

class FeatureDetector {
 public:
  virtual ~FeatureDetector() = default;
  virtual std::vector<Feature> detect(const Grid& image) const = 0;
  virtual std::string name() const = 0;
};

struct BuiltinDetectorConfig {
  int max_features = 400;
  double min_score = 1e-4;   // absolute min-eigenvalue floor
  int nms_radius = 5;        // px
  int patch_radius = 5;      // 11x11 descriptor patch
};

// Shi-Tomasi corner score (min eigenvalue of the 3x3-summed structure
// tensor) with a mean-removed, unit-normalized intensity patch descriptor.
std::unique_ptr<FeatureDetector> make_builtin_detector(const BuiltinDetectorConfig& cfg = {});

// Serialized filter-bank backend: a score filter plus descriptor filters
// applied to local patches, loaded from a JSON model file. Throws
// DetectorFailure if the file is missing or malformed. Input is the H x W
// float image; output is N x 2 keypoints with N x D unit descriptors.
std::unique_ptr<FeatureDetector> make_learned_detector(const std::string& model_path,
                                                       int max_features = 400);

// Factory used by the run configuration ("builtin" or "learned").
std::unique_ptr<FeatureDetector> make_detector(const std::string& backend,
                                               const std::string& model_path,
                                               const BuiltinDetectorConfig& cfg = {});

// ---------------------------------------------------------------------------
// Matching. Both matchers gate on descriptor L2 distance <= max_distance and
// a spatial window of neighborhood * cell_size pixels (Chebyshev), resolved
// through per-cell buckets. Stereo matching additionally enforces
// mutual-best consistency; ties break toward the lower feature index.
// ---------------------------------------------------------------------------

std::vector<Match> match_stereo(const std::vector<Feature>& left,
                                const std::vector<Feature>& right, const MatchingParams& params);

// A map point projected into the current frame: predicted pixel, the pixel of
// the same point in the previous keyframe (orients the semi-circular search
// region), and the predicted depth for frustum gating.
struct ProjectedPoint {
  int point_index = 0;  // caller-side handle (e.g. map point id)
  Eigen::Vector2d predicted_px = Eigen::Vector2d::Zero();
  Eigen::Vector2d previous_px = Eigen::Vector2d::Zero();
  double depth = 0.0;
};

// Matches projected map points against current features inside a half-disc
// of radius neighborhood * cell_size oriented along the predicted motion
// (full disc when the prediction is static). Returns (projected index,
// feature index) pairs; one-to-one by descriptor distance.
std::vector<Match> match_temporal(const std::vector<ProjectedPoint>& projected,
                                  const std::vector<Eigen::VectorXf>& point_descriptors,
                                  const std::vector<Feature>& current,
                                  const MatchingParams& params);

double descriptor_distance(const Eigen::VectorXf& a, const Eigen::VectorXf& b);

}  // namespace evptam

#endif  // EVPTAM_FEATURES_HPP
