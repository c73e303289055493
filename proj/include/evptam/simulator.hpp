#ifndef EVPTAM_SIMULATOR_HPP
#define EVPTAM_SIMULATOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "evptam/events.hpp"
#include "evptam/geometry.hpp"

// Synthetic stereo hybrid rig: ground-truth trajectories, landmark scenes,
// rendered frames and brightness-change event streams. All outputs are
// deterministic under a fixed seed; the renderer and the geometry module
// share one projection.

namespace evptam {

enum class PathKind { Line, Circle, FigureEight };

struct Landmark {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double intensity = 1.0;  // blob peak intensity
};

struct SceneNoise {
  double pixel_sigma = 0.0;   // blob-center jitter, px
  double event_jitter = 0.0;  // event timestamp jitter, s
  double contrast_threshold = 0.06;
};

// Interval during which rendered frames are exposure-scaled; events are
// generated from the unscaled scene luminance, so they persist.
struct FrameDimming {
  double t_start = 0.0, t_end = 0.0;
  double factor = 1.0;
  bool active(double t) const { return factor != 1.0 && t >= t_start && t < t_end; }
};

struct SceneSpec {
  std::vector<Landmark> landmarks;
  PathKind path = PathKind::FigureEight;
  double duration = 16.0;    // seconds
  double frame_rate = 25.0;  // Hz
  double path_scale = 1.0;   // m, lateral extent of the path
  RigCalibration rig;
  SceneNoise noise;
  FrameDimming dimming;
  std::uint32_t seed = 7;
  int event_substeps = 4;  // luminance samples per frame interval
};

// Camera-in-world pose at path parameter s in [0, 1].
Pose path_pose(const SceneSpec& spec, double s);

// The default stereo hybrid rig used by fixtures: 320x240 frame cameras,
// slightly offset event cameras, 0.2 m baseline.
RigCalibration default_rig();

struct RenderedFrame {
  double timestamp = 0.0;  // seconds
  Grid left, right;
  Pose T_wc;  // camera-in-world, left frame camera
  // Projected blob centers actually rendered, per side (for oracle checks).
  std::vector<Eigen::Vector2d> centers_left, centers_right;
  std::vector<int> landmark_ids_left, landmark_ids_right;
};

// Landmarks splatted as Gaussian blobs (radius 2 px) at their projected
// positions; exposure dimming applied per the spec.
std::vector<RenderedFrame> render_frames(const SceneSpec& spec);

// Render only the pose/centers bookkeeping of one timestamp (no pixels).
RenderedFrame render_geometry(const SceneSpec& spec, double timestamp);

struct StereoEvents {
  std::vector<Event> left, right;
};

// Per-pixel log-intensity threshold crossings between luminance samples,
// timestamps linearly interpolated within each interval, polarity from the
// sign of the change. No refractory period.
StereoEvents generate_events(const SceneSpec& spec);

// Closed figure-eight revisiting its start, guaranteeing loop-closure
// opportunities within the depth frustum.
SceneSpec make_loop_fixture();

// Everything a pipeline run consumes, in memory.
struct SimulatedData {
  SceneSpec spec;
  std::vector<RenderedFrame> frames;
  StereoEvents events;
};

SimulatedData simulate(const SceneSpec& spec);

// Writes the dataset in the layout the "sim" adapter reads: calib.txt,
// frames.csv, frames/{left,right}_NNNNNN.pgm, events_{left,right}.bin,
// groundtruth.tum.
void write_dataset(const SimulatedData& data, const std::string& directory);

}  // namespace evptam

#endif  // EVPTAM_SIMULATOR_HPP
