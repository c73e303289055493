#include "evptam/geometry.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace evptam {

void RigCalibration::validate() const {
  auto check_cam = [](const PinholeCamera& c, const char* name) {
    if (!(c.fx > 0.0) || !(c.fy > 0.0)) {
      throw ConfigError(std::string(name) + ": focal lengths must be positive");
    }
    if (c.cx < 0.0 || c.cx >= c.width || c.cy < 0.0 || c.cy >= c.height) {
      throw ConfigError(std::string(name) + ": principal point outside image");
    }
  };
  check_cam(cam_left, "cam_left");
  check_cam(cam_right, "cam_right");
  check_cam(dvs_left, "dvs_left");
  check_cam(dvs_right, "dvs_right");
  if (!(T_lr.translation().norm() > 0.0)) {
    throw ConfigError("stereo baseline must be non-zero");
  }
  if (!align_left.allFinite() || !align_right.allFinite()) {
    throw ConfigError("alignment offsets must be finite");
  }
  if (exposure_time < 0.0) {
    throw ConfigError("exposure time must be non-negative");
  }
}

namespace {

using KeyValues = std::map<std::string, std::vector<double>>;

KeyValues parse_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration file: " + path);
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.empty()) throw ParseError("calibration key without value: " + key, line_no);
    kv[key] = values;
  }
  return kv;
}

double scalar_of(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError("missing calibration key: " + key);
  return it->second.front();
}

Eigen::VectorXd vector_of(const KeyValues& kv, const std::string& key, int n) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError("missing calibration key: " + key);
  if (static_cast<int>(it->second.size()) != n) {
    throw DataError("calibration key " + key + " expects " + std::to_string(n) + " values");
  }
  return Eigen::Map<const Eigen::VectorXd>(it->second.data(), n);
}

PinholeCamera camera_of(const KeyValues& kv, const std::string& prefix) {
  PinholeCamera cam;
  cam.fx = scalar_of(kv, prefix + ".fx");
  cam.fy = scalar_of(kv, prefix + ".fy");
  cam.cx = scalar_of(kv, prefix + ".cx");
  cam.cy = scalar_of(kv, prefix + ".cy");
  cam.width = static_cast<int>(scalar_of(kv, prefix + ".width"));
  cam.height = static_cast<int>(scalar_of(kv, prefix + ".height"));
  return cam;
}

Pose pose_of(const KeyValues& kv, const std::string& prefix) {
  const Eigen::VectorXd t = vector_of(kv, prefix + ".t", 3);
  const Eigen::VectorXd q = vector_of(kv, prefix + ".q", 4);  // x y z w
  return Pose(Eigen::Quaterniond(q[3], q[0], q[1], q[2]), Eigen::Vector3d(t));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void put_camera(std::ostream& out, const std::string& prefix, const PinholeCamera& cam) {
  out << prefix << ".fx " << fmt(cam.fx) << "\n";
  out << prefix << ".fy " << fmt(cam.fy) << "\n";
  out << prefix << ".cx " << fmt(cam.cx) << "\n";
  out << prefix << ".cy " << fmt(cam.cy) << "\n";
  out << prefix << ".width " << cam.width << "\n";
  out << prefix << ".height " << cam.height << "\n";
}

void put_pose(std::ostream& out, const std::string& prefix, const Pose& pose) {
  const auto& t = pose.translation();
  const auto& q = pose.quaternion();
  out << prefix << ".t " << fmt(t.x()) << " " << fmt(t.y()) << " " << fmt(t.z()) << "\n";
  out << prefix << ".q " << fmt(q.x()) << " " << fmt(q.y()) << " " << fmt(q.z()) << " "
      << fmt(q.w()) << "\n";
}

}  // namespace

RigCalibration read_rig_calibration(const std::string& path) {
  const KeyValues kv = parse_key_values(path);
  RigCalibration rig;
  rig.cam_left = camera_of(kv, "cam_left");
  rig.cam_right = camera_of(kv, "cam_right");
  rig.dvs_left = camera_of(kv, "dvs_left");
  rig.dvs_right = camera_of(kv, "dvs_right");
  rig.T_cd_left = pose_of(kv, "T_cd_left");
  rig.T_cd_right = pose_of(kv, "T_cd_right");
  rig.T_lr = pose_of(kv, "T_lr");
  rig.align_left = vector_of(kv, "align_left", 2);
  rig.align_right = vector_of(kv, "align_right", 2);
  rig.exposure_time = scalar_of(kv, "exposure_time");
  rig.validate();
  return rig;
}

void write_rig_calibration(const RigCalibration& rig, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write calibration file: " + path);
  out << "# stereo hybrid rig calibration\n";
  out << "# intrinsics/offsets in pixels, extrinsics in meters, exposure in seconds\n";
  out << "# quaternions stored x y z w\n";
  put_camera(out, "cam_left", rig.cam_left);
  put_camera(out, "cam_right", rig.cam_right);
  put_camera(out, "dvs_left", rig.dvs_left);
  put_camera(out, "dvs_right", rig.dvs_right);
  put_pose(out, "T_cd_left", rig.T_cd_left);
  put_pose(out, "T_cd_right", rig.T_cd_right);
  put_pose(out, "T_lr", rig.T_lr);
  out << "align_left " << fmt(rig.align_left.x()) << " " << fmt(rig.align_left.y()) << "\n";
  out << "align_right " << fmt(rig.align_right.x()) << " " << fmt(rig.align_right.y()) << "\n";
  out << "exposure_time " << fmt(rig.exposure_time) << "\n";
}

}  // namespace evptam
