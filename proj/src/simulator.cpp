#include "evptam/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "evptam/image_io.hpp"
#include "evptam/trajectory.hpp"

namespace evptam {

RigCalibration default_rig() {
  RigCalibration rig;
  rig.cam_left = PinholeCamera{240.0, 240.0, 160.0, 120.0, 320, 240};
  rig.cam_right = rig.cam_left;
  rig.dvs_left = PinholeCamera{230.0, 230.0, 158.0, 118.0, 320, 240};
  rig.dvs_right = rig.dvs_left;
  rig.T_cd_left = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.01, 0.005, 0.0));
  rig.T_cd_right = rig.T_cd_left;
  rig.T_lr = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.2, 0.0, 0.0));
  rig.exposure_time = 0.004;
  return rig;
}

Pose path_pose(const SceneSpec& spec, double s) {
  const double a = spec.path_scale;
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
  double yaw = 0.0, pitch = 0.0;
  switch (spec.path) {
    case PathKind::Line:
      pos = Eigen::Vector3d(a * (2.0 * s - 1.0), 0.0, 0.0);
      break;
    case PathKind::Circle:
      pos = Eigen::Vector3d(a * std::sin(2.0 * M_PI * s), a * (1.0 - std::cos(2.0 * M_PI * s)),
                            0.0);
      yaw = 0.05 * std::sin(2.0 * M_PI * s);
      break;
    case PathKind::FigureEight:
      // Gerono lemniscate; position and the small periodic look direction
      // both coincide at s = 0, 0.5 and 1.
      pos = Eigen::Vector3d(a * std::sin(2.0 * M_PI * s),
                            0.3 * a * std::sin(4.0 * M_PI * s), 0.0);
      yaw = 0.06 * std::sin(2.0 * M_PI * s);
      pitch = 0.04 * std::sin(4.0 * M_PI * s);
      break;
  }
  const Eigen::Matrix3d r =
      (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  return Pose(r, pos);  // camera-in-world, looking along +z toward the wall
}

namespace {

constexpr double kBlobSigma = 1.0;  // px
constexpr int kBlobWindow = 3;      // splat radius, px
constexpr double kLogEps = 0.05;    // linlog offset for the event model

struct CameraView {
  PinholeCamera cam;
  Pose T_cw;
};

CameraView view_for(const SceneSpec& spec, const Pose& T_wc_left_frame, Side side, bool event_cam) {
  const RigCalibration& rig = spec.rig;
  Pose T_wc = T_wc_left_frame;
  if (side == Side::Right) T_wc = T_wc * rig.T_lr;
  if (event_cam) T_wc = T_wc * rig.T_cd(side);
  return CameraView{event_cam ? rig.event_cam(side) : rig.frame_cam(side), T_wc.inverse()};
}

void splat_blob(Grid& image, const Eigen::Vector2d& center, double intensity) {
  const int rows = static_cast<int>(image.rows());
  const int cols = static_cast<int>(image.cols());
  const int cx = static_cast<int>(std::lround(center.x()));
  const int cy = static_cast<int>(std::lround(center.y()));
  for (int y = cy - kBlobWindow; y <= cy + kBlobWindow; ++y) {
    for (int x = cx - kBlobWindow; x <= cx + kBlobWindow; ++x) {
      if (x < 0 || y < 0 || x >= cols || y >= rows) continue;
      const double dx = x - center.x();
      const double dy = y - center.y();
      image(y, x) += static_cast<float>(
          intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * kBlobSigma * kBlobSigma)));
    }
  }
}

// Landmarks splatted into one camera view; centers/ids optionally recorded.
Grid render_view(const SceneSpec& spec, const CameraView& view,
                 const std::vector<Eigen::Vector2d>* jitter,
                 std::vector<Eigen::Vector2d>* centers, std::vector<int>* ids) {
  Grid image = Grid::Zero(view.cam.height, view.cam.width);
  const double margin = kBlobWindow + 1;
  for (std::size_t l = 0; l < spec.landmarks.size(); ++l) {
    const Landmark& lm = spec.landmarks[l];
    Eigen::Vector2d px;
    if (!try_project(view.cam, view.T_cw, lm.position, &px)) continue;
    if (jitter) px += (*jitter)[l];
    if (px.x() < -margin || px.y() < -margin || px.x() >= view.cam.width + margin ||
        px.y() >= view.cam.height + margin) {
      continue;
    }
    splat_blob(image, px, lm.intensity);
    if (centers && view.cam.contains(px)) {
      centers->push_back(px);
      ids->push_back(static_cast<int>(l));
    }
  }
  image = image.min(1.0f);
  return image;
}

}  // namespace

RenderedFrame render_geometry(const SceneSpec& spec, double timestamp) {
  RenderedFrame frame;
  frame.timestamp = timestamp;
  frame.T_wc = path_pose(spec, std::clamp(timestamp / spec.duration, 0.0, 1.0));
  for (Side side : {Side::Left, Side::Right}) {
    const CameraView view = view_for(spec, frame.T_wc, side, false);
    auto& centers = side == Side::Left ? frame.centers_left : frame.centers_right;
    auto& ids = side == Side::Left ? frame.landmark_ids_left : frame.landmark_ids_right;
    for (std::size_t l = 0; l < spec.landmarks.size(); ++l) {
      Eigen::Vector2d px;
      if (!try_project(view.cam, view.T_cw, spec.landmarks[l].position, &px)) continue;
      if (view.cam.contains(px)) {
        centers.push_back(px);
        ids.push_back(static_cast<int>(l));
      }
    }
  }
  return frame;
}

std::vector<RenderedFrame> render_frames(const SceneSpec& spec) {
  const int n_frames = static_cast<int>(std::lround(spec.duration * spec.frame_rate)) + 1;
  std::mt19937 rng(spec.seed);
  std::normal_distribution<double> pixel_noise(0.0, spec.noise.pixel_sigma);

  std::vector<RenderedFrame> frames;
  frames.reserve(n_frames);
  for (int i = 0; i < n_frames; ++i) {
    const double t = i / spec.frame_rate;
    RenderedFrame frame;
    frame.timestamp = t;
    frame.T_wc = path_pose(spec, std::clamp(t / spec.duration, 0.0, 1.0));

    std::vector<Eigen::Vector2d> jitter(spec.landmarks.size(), Eigen::Vector2d::Zero());
    if (spec.noise.pixel_sigma > 0.0) {
      for (auto& j : jitter) j = Eigen::Vector2d(pixel_noise(rng), pixel_noise(rng));
    }

    for (Side side : {Side::Left, Side::Right}) {
      const CameraView view = view_for(spec, frame.T_wc, side, false);
      auto& centers = side == Side::Left ? frame.centers_left : frame.centers_right;
      auto& ids = side == Side::Left ? frame.landmark_ids_left : frame.landmark_ids_right;
      Grid image = render_view(spec, view, &jitter, &centers, &ids);
      if (spec.dimming.active(t)) image *= static_cast<float>(spec.dimming.factor);
      (side == Side::Left ? frame.left : frame.right) = std::move(image);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

StereoEvents generate_events(const SceneSpec& spec) {
  StereoEvents out;
  const int n_frames = static_cast<int>(std::lround(spec.duration * spec.frame_rate)) + 1;
  const double frame_dt = 1.0 / spec.frame_rate;
  const int substeps = std::max(1, spec.event_substeps);
  std::mt19937 rng(spec.seed + 1);
  std::normal_distribution<double> jitter(0.0, spec.noise.event_jitter);
  const double c = spec.noise.contrast_threshold;

  for (Side side : {Side::Left, Side::Right}) {
    std::vector<Event>& events = side == Side::Left ? out.left : out.right;
    const PinholeCamera& cam = spec.rig.event_cam(side);
    const int total_steps = (n_frames - 1) * substeps;
    const double dt = frame_dt / substeps;
    Grid log_prev, log_ref;

    for (int j = 0; j <= total_steps; ++j) {
      const double t = j * dt;
      const Pose T_wc = path_pose(spec, std::clamp(t / spec.duration, 0.0, 1.0));
      const CameraView view = view_for(spec, T_wc, side, true);
      const Grid lum = render_view(spec, view, nullptr, nullptr, nullptr);
      const Grid log_lum = (lum + static_cast<float>(kLogEps)).log();
      if (j == 0) {
        log_prev = log_lum;
        log_ref = log_lum;
        continue;
      }
      const double t_prev = t - dt;
      for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
          const double l = log_lum(y, x);
          const double lp = log_prev(y, x);
          const double d = l - lp;
          if (d == 0.0) continue;
          double ref = log_ref(y, x);
          const std::int8_t polarity = d > 0.0 ? +1 : -1;
          while ((d > 0.0 && l - ref >= c) || (d < 0.0 && ref - l >= c)) {
            ref += d > 0.0 ? c : -c;
            double te = t_prev + (ref - lp) / d * dt;
            if (spec.noise.event_jitter > 0.0) te += jitter(rng);
            events.push_back(Event{seconds_to_ns(std::max(te, 0.0)),
                                   static_cast<std::uint16_t>(x),
                                   static_cast<std::uint16_t>(y), polarity});
          }
          log_ref(y, x) = static_cast<float>(ref);
        }
      }
      log_prev = log_lum;
    }
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
      if (a.t != b.t) return a.t < b.t;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
  }
  return out;
}

SceneSpec make_loop_fixture() {
  SceneSpec spec;
  spec.path = PathKind::FigureEight;
  spec.duration = 16.0;
  spec.frame_rate = 25.0;
  spec.path_scale = 1.0;
  spec.rig = default_rig();
  spec.seed = 7;

  // Wall of jittered blobs in front of the path, depths 5..7 m.
  std::mt19937 rng(spec.seed);
  std::uniform_real_distribution<double> jitter(-0.14, 0.14);
  std::uniform_real_distribution<double> depth(5.0, 7.0);
  std::uniform_real_distribution<double> intensity(0.55, 1.0);
  for (double x = -5.5; x <= 5.5; x += 0.55) {
    for (double y = -3.3; y <= 3.3; y += 0.55) {
      Landmark lm;
      lm.position = Eigen::Vector3d(x + jitter(rng), y + jitter(rng), depth(rng));
      lm.intensity = intensity(rng);
      spec.landmarks.push_back(lm);
    }
  }
  return spec;
}

SimulatedData simulate(const SceneSpec& spec) {
  SimulatedData data;
  data.spec = spec;
  data.frames = render_frames(spec);
  data.events = generate_events(spec);
  return data;
}

void write_dataset(const SimulatedData& data, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(directory) / "frames");

  write_rig_calibration(data.spec.rig, (fs::path(directory) / "calib.txt").string());

  // Frame timestamps are recorded as exposure-start instants so the fusion
  // timestamps reconstruct the mid-exposure render times exactly.
  const double half_exp = data.spec.rig.exposure_time / 2.0;
  std::ofstream frames_csv((fs::path(directory) / "frames.csv").string());
  if (!frames_csv) throw DataError("cannot write frames.csv");
  frames_csv << "index,timestamp_ns\n";
  char name[64];
  Trajectory gt;
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    const RenderedFrame& f = data.frames[i];
    const std::uint64_t t_cam_ns = seconds_to_ns(std::max(0.0, f.timestamp - half_exp));
    frames_csv << i << "," << t_cam_ns << "\n";
    std::snprintf(name, sizeof(name), "left_%06zu.pgm", i);
    write_pgm(f.left, (fs::path(directory) / "frames" / name).string());
    std::snprintf(name, sizeof(name), "right_%06zu.pgm", i);
    write_pgm(f.right, (fs::path(directory) / "frames" / name).string());
    gt.push_back(TrajectoryRecord{f.timestamp, f.T_wc});
  }
  write_events_binary(data.events.left, (fs::path(directory) / "events_left.bin").string());
  write_events_binary(data.events.right, (fs::path(directory) / "events_right.bin").string());
  write_tum(gt, (fs::path(directory) / "groundtruth.tum").string());
}

}  // namespace evptam
