#include "evptam/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>

namespace evptam {

// ---------------------------------------------------------------------------
// SharedMap
// ---------------------------------------------------------------------------

int SharedMap::add_keyframe(Keyframe kf) {
  std::unique_lock lock(mutex_);
  kf.id = next_keyframe_id_++;
  if (kf.feature_point.size() != kf.features.size()) {
    kf.feature_point.assign(kf.features.size(), -1);
  }
  const int id = kf.id;
  keyframes_.emplace(id, std::move(kf));
  return id;
}

int SharedMap::add_point(MapPoint point) {
  std::unique_lock lock(mutex_);
  point.id = next_point_id_++;
  const int id = point.id;
  points_.emplace(id, std::move(point));
  return id;
}

void SharedMap::add_observation(int point_id, int keyframe_id, const Eigen::Vector2d& px,
                                const Eigen::VectorXf& descriptor) {
  std::unique_lock lock(mutex_);
  auto& point = points_.at(point_id);
  point.observations.push_back(Observation{keyframe_id, px});
  if (descriptor.size() > 0) point.descriptor = descriptor;
}

void SharedMap::link_feature(int keyframe_id, int feature_index, int point_id) {
  std::unique_lock lock(mutex_);
  keyframes_.at(keyframe_id).feature_point.at(feature_index) = point_id;
}

void SharedMap::remove_point(int point_id) {
  std::unique_lock lock(mutex_);
  const auto it = points_.find(point_id);
  if (it == points_.end()) return;
  for (const auto& obs : it->second.observations) {
    const auto kf = keyframes_.find(obs.keyframe_id);
    if (kf == keyframes_.end()) continue;
    for (auto& fp : kf->second.feature_point) {
      if (fp == point_id) fp = -1;
    }
  }
  points_.erase(it);
}

std::size_t SharedMap::num_keyframes() const {
  std::shared_lock lock(mutex_);
  return keyframes_.size();
}

std::size_t SharedMap::num_points() const {
  std::shared_lock lock(mutex_);
  return points_.size();
}

Keyframe SharedMap::keyframe(int id) const {
  std::shared_lock lock(mutex_);
  return keyframes_.at(id);
}

MapPoint SharedMap::point(int id) const {
  std::shared_lock lock(mutex_);
  return points_.at(id);
}

std::vector<int> SharedMap::keyframe_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<int> ids;
  ids.reserve(keyframes_.size());
  for (const auto& [id, kf] : keyframes_) ids.push_back(id);
  return ids;
}

std::vector<int> SharedMap::point_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<int> ids;
  ids.reserve(points_.size());
  for (const auto& [id, pt] : points_) ids.push_back(id);
  return ids;
}

std::vector<MapPoint> SharedMap::all_points() const {
  std::shared_lock lock(mutex_);
  std::vector<MapPoint> out;
  out.reserve(points_.size());
  for (const auto& [id, pt] : points_) out.push_back(pt);
  return out;
}

std::vector<Keyframe> SharedMap::all_keyframes() const {
  std::shared_lock lock(mutex_);
  std::vector<Keyframe> out;
  out.reserve(keyframes_.size());
  for (const auto& [id, kf] : keyframes_) out.push_back(kf);
  return out;
}

std::vector<std::tuple<int, int, int>> SharedMap::covisibility_edges() const {
  std::shared_lock lock(mutex_);
  std::map<std::pair<int, int>, int> counts;
  for (const auto& [pid, pt] : points_) {
    for (std::size_t a = 0; a < pt.observations.size(); ++a) {
      for (std::size_t b = a + 1; b < pt.observations.size(); ++b) {
        int i = pt.observations[a].keyframe_id;
        int j = pt.observations[b].keyframe_id;
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        ++counts[{i, j}];
      }
    }
  }
  std::vector<std::tuple<int, int, int>> edges;
  edges.reserve(counts.size());
  for (const auto& [key, n] : counts) edges.emplace_back(key.first, key.second, n);
  return edges;
}

int SharedMap::observation_count(int keyframe_id) const {
  std::shared_lock lock(mutex_);
  int count = 0;
  for (const auto& [pid, pt] : points_) {
    for (const auto& obs : pt.observations) {
      if (obs.keyframe_id == keyframe_id) {
        ++count;
        break;
      }
    }
  }
  return count;
}

void SharedMap::set_embedding(int keyframe_id, const Eigen::VectorXf& embedding) {
  std::unique_lock lock(mutex_);
  keyframes_.at(keyframe_id).embedding = embedding;
}

void SharedMap::set_keyframe_pose(int id, const Pose& T_cw) {
  std::unique_lock lock(mutex_);
  keyframes_.at(id).T_cw = T_cw;
}

void SharedMap::set_point_position(int id, const Eigen::Vector3d& x) {
  std::unique_lock lock(mutex_);
  points_.at(id).position = x;
}

void SharedMap::commit(const std::map<int, Pose>& keyframe_poses,
                       const std::map<int, Eigen::Vector3d>& point_positions) {
  std::unique_lock lock(mutex_);
  for (const auto& [id, pose] : keyframe_poses) keyframes_.at(id).T_cw = pose;
  for (const auto& [id, x] : point_positions) {
    const auto it = points_.find(id);
    if (it != points_.end()) it->second.position = x;  // point may have been culled meanwhile
  }
}

std::string SharedMap::check_integrity() const {
  std::shared_lock lock(mutex_);
  for (const auto& [pid, pt] : points_) {
    if (pt.observations.empty()) return "point " + std::to_string(pid) + " has no observations";
    if (!pt.position.allFinite()) return "point " + std::to_string(pid) + " is non-finite";
    for (const auto& obs : pt.observations) {
      if (keyframes_.find(obs.keyframe_id) == keyframes_.end()) {
        return "point " + std::to_string(pid) + " references missing keyframe " +
               std::to_string(obs.keyframe_id);
      }
    }
  }
  for (const auto& [kid, kf] : keyframes_) {
    for (std::size_t f = 0; f < kf.feature_point.size(); ++f) {
      const int pid = kf.feature_point[f];
      if (pid >= 0 && points_.find(pid) == points_.end()) {
        return "keyframe " + std::to_string(kid) + " references missing point " +
               std::to_string(pid);
      }
    }
  }
  return {};
}

void SharedMap::dump(const std::string& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write map dump: " + path);
  for (const auto& [pid, pt] : points_) {
    const int g = std::clamp(static_cast<int>(std::lround(pt.intensity * 255.0)), 0, 255);
    out << pt.position.x() << " " << pt.position.y() << " " << pt.position.z() << " " << g << " "
        << g << " " << g << "\n";
  }
  out << "# keyframe trajectory: id timestamp tx ty tz qx qy qz qw (camera-in-world)\n";
  for (const auto& [kid, kf] : keyframes_) {
    const Pose T_wc = kf.T_cw.inverse();
    const auto& t = T_wc.translation();
    const auto& q = T_wc.quaternion();
    out << "# kf " << kid << " " << kf.timestamp << " " << t.x() << " " << t.y() << " " << t.z()
        << " " << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Reprojection residual
// ---------------------------------------------------------------------------

bool reprojection_residual(const PinholeCamera& cam, const Pose& T_cw,
                           const Eigen::Vector3d& point, const Eigen::Vector2d& measurement,
                           Eigen::Vector2d* residual, Eigen::Matrix<double, 2, 6>* j_pose,
                           Eigen::Matrix<double, 2, 3>* j_point) {
  const Eigen::Vector3d xc = T_cw * point;
  if (!(xc.z() > 0.0)) return false;
  const double iz = 1.0 / xc.z();
  (*residual) << measurement.x() - (cam.fx * xc.x() * iz + cam.cx),
      measurement.y() - (cam.fy * xc.y() * iz + cam.cy);

  if (j_pose || j_point) {
    Eigen::Matrix<double, 2, 3> d_pi;
    d_pi << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz, 0.0, cam.fy * iz,
        -cam.fy * xc.y() * iz * iz;
    if (j_pose) {
      j_pose->leftCols<3>() = -d_pi;
      j_pose->rightCols<3>() = d_pi * skew<double>(xc);
    }
    if (j_point) {
      *j_point = -d_pi * T_cw.rotation();
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Keyframe point insertion
// ---------------------------------------------------------------------------

std::vector<int> insert_keyframe_points(SharedMap& map, int keyframe_id,
                                        const std::vector<StereoObservation>& stereo,
                                        const RigCalibration& rig, const MappingConfig& cfg) {
  const Keyframe kf = map.keyframe(keyframe_id);
  const Pose T_wc = kf.T_cw.inverse();
  const double focal = rig.cam_left.fx;
  const double baseline = rig.T_lr.translation().norm();

  std::vector<int> created;
  for (const auto& s : stereo) {
    const Feature& feat = kf.features[s.left_feature];
    Eigen::Vector3d x_cam;
    try {
      x_cam = triangulate(rig.cam_left, rig.cam_right, rig.T_lr, feat.px, s.right_px);
    } catch (const DegenerateRays&) {
      continue;
    }
    const double z = x_cam.z();
    if (z < cfg.frustum_near || z > cfg.frustum_far) continue;

    MapPoint point;
    point.position = T_wc * x_cam;
    point.descriptor = feat.descriptor;
    point.depth_uncertainty = z * z * cfg.sigma_px / (focal * baseline);
    point.observations.push_back(Observation{keyframe_id, feat.px});
    const int pid = map.add_point(std::move(point));
    map.link_feature(keyframe_id, s.left_feature, pid);
    created.push_back(pid);
  }
  return created;
}

// ---------------------------------------------------------------------------
// Local bundle adjustment
// ---------------------------------------------------------------------------

namespace {

std::vector<int> window_ids(const SharedMap& map, int window_size) {
  std::vector<int> ids = map.keyframe_ids();
  if (static_cast<int>(ids.size()) > window_size) {
    ids.erase(ids.begin(), ids.end() - window_size);
  }
  return ids;
}

}  // namespace

BAReport local_bundle_adjust(SharedMap& map, const RigCalibration& rig,
                             const MappingConfig& cfg) {
  BAReport report;
  const std::vector<int> window = window_ids(map, cfg.window_size);
  if (window.empty()) return report;
  const std::set<int> in_window(window.begin(), window.end());

  // Snapshot the windowed keyframes and every point they observe.
  std::map<int, Keyframe> kfs;
  for (int id : window) kfs.emplace(id, map.keyframe(id));
  std::map<int, MapPoint> pts;
  for (const MapPoint& p : map.all_points()) {
    int windowed_obs = 0;
    for (const auto& obs : p.observations) windowed_obs += in_window.count(obs.keyframe_id);
    if (windowed_obs >= 2) pts.emplace(p.id, p);
  }
  if (pts.empty()) return report;

  Problem problem;
  std::map<int, int> pose_block, point_block;
  for (int id : window) {
    const bool fixed = id == window.front();  // gauge: oldest pose held
    pose_block[id] = problem.add_pose(kfs.at(id).T_cw, fixed);
  }
  for (const auto& [pid, pt] : pts) {
    point_block[pid] = problem.add_point(pt.position);
  }

  const PinholeCamera cam = rig.cam_left;
  int num_residuals = 0;
  for (const auto& [pid, pt] : pts) {
    for (const auto& obs : pt.observations) {
      if (!in_window.count(obs.keyframe_id)) continue;
      const int pb = pose_block.at(obs.keyframe_id);
      const int lb = point_block.at(pid);
      const Eigen::Vector2d z = obs.px;
      double weight = 1.0;
      if (cfg.depth_weighting) {
        const double sigma = std::max(pt.depth_uncertainty, 1e-6);
        weight = 1.0 / (sigma * sigma);
      }
      problem.add_residual(
          2, {Problem::pose_ref(pb), Problem::point_ref(lb)},
          [cam, z, pb, lb](const Problem& p, Eigen::VectorXd& r,
                           std::vector<Eigen::MatrixXd>* jac) {
            Eigen::Vector2d res;
            Eigen::Matrix<double, 2, 6> jp;
            Eigen::Matrix<double, 2, 3> jx;
            if (!reprojection_residual(cam, p.pose(pb), p.point(lb), z, &res,
                                       jac ? &jp : nullptr, jac ? &jx : nullptr)) {
              return false;
            }
            r = res;
            if (jac) {
              (*jac)[0] = jp;
              (*jac)[1] = jx;
            }
            return true;
          },
          weight);
      ++num_residuals;
    }
  }
  if (num_residuals == 0) return report;

  auto rms = [&](const Problem& p) {
    double sq = 0.0;
    int n = 0;
    for (const auto& [pid, pt] : pts) {
      for (const auto& obs : pt.observations) {
        if (!in_window.count(obs.keyframe_id)) continue;
        Eigen::Vector2d r;
        if (reprojection_residual(cam, p.pose(pose_block.at(obs.keyframe_id)),
                                  p.point(point_block.at(pid)), obs.px, &r)) {
          sq += r.squaredNorm();
          ++n;
        }
      }
    }
    return n > 0 ? std::sqrt(sq / n) : 0.0;
  };

  report.ran = true;
  report.num_poses = static_cast<int>(window.size());
  report.num_points = static_cast<int>(pts.size());
  report.num_residuals = num_residuals;
  report.rms_reproj_before = rms(problem);

  try {
    report.solve = lm_minimize(problem, cfg.loss, cfg.lm);
  } catch (const Error&) {
    return report;  // transactional: the map stays untouched
  }
  report.rms_reproj_after = rms(problem);

  std::map<int, Pose> new_poses;
  for (const auto& [kid, block] : pose_block) new_poses[kid] = problem.pose(block);
  std::map<int, Eigen::Vector3d> new_points;
  for (const auto& [pid, block] : point_block) new_points[pid] = problem.point(block);
  map.commit(new_poses, new_points);
  report.committed = true;
  return report;
}

std::vector<int> cull_points(SharedMap& map, const RigCalibration& rig,
                             const MappingConfig& cfg) {
  const std::vector<int> window = window_ids(map, cfg.window_size);
  const std::set<int> in_window(window.begin(), window.end());
  const PinholeCamera cam = rig.cam_left;

  std::vector<int> removed;
  for (const MapPoint& pt : map.all_points()) {
    bool cull = false;
    if (pt.observations.size() < 2) {
      bool any_windowed = false;
      for (const auto& obs : pt.observations) {
        any_windowed = any_windowed || in_window.count(obs.keyframe_id) > 0;
      }
      cull = !any_windowed;
    }
    if (!cull) {
      double sq = 0.0;
      int n = 0;
      bool behind = false;
      for (const auto& obs : pt.observations) {
        Eigen::Vector2d r;
        if (reprojection_residual(cam, map.keyframe(obs.keyframe_id).T_cw, pt.position, obs.px,
                                  &r)) {
          sq += r.norm();
          ++n;
        } else {
          behind = true;
        }
      }
      cull = behind || (n > 0 && sq / n > cfg.cull_reproj_px);
    }
    if (cull) {
      map.remove_point(pt.id);
      removed.push_back(pt.id);
    }
  }
  return removed;
}

}  // namespace evptam
