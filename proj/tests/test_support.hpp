#ifndef EVPTAM_TEST_SUPPORT_HPP
#define EVPTAM_TEST_SUPPORT_HPP

#include <random>

#include "evptam/geometry.hpp"

// Shared deterministic generators for randomized tests.

namespace evptam::testing {

inline std::mt19937& rng(std::uint32_t seed = 12345) {
  static std::mt19937 gen(seed);
  return gen;
}

inline double uniform(std::mt19937& gen, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(gen);
}

inline Eigen::Vector3d random_vector(std::mt19937& gen, double scale = 1.0) {
  return Eigen::Vector3d(uniform(gen, -scale, scale), uniform(gen, -scale, scale),
                         uniform(gen, -scale, scale));
}

// Unit quaternion with rotation angle strictly below pi (w > 0).
inline Eigen::Quaterniond random_quaternion(std::mt19937& gen, double max_angle = 3.0) {
  const Eigen::Vector3d axis = random_vector(gen).normalized();
  const double angle = uniform(gen, 0.0, max_angle);
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis));
}

inline Pose random_pose(std::mt19937& gen, double translation_scale = 2.0) {
  return Pose(random_quaternion(gen), random_vector(gen, translation_scale));
}

inline PoseIncrement random_increment(std::mt19937& gen) {
  PoseIncrement mu;
  mu.delta_translation = random_vector(gen, 2.0);
  Eigen::Quaterniond q = random_quaternion(gen);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  mu.delta_quaternion << q.x(), q.y(), q.z(), q.w();
  return mu;
}

// Independent projection oracle: dehomogenized 4x4 homogeneous-matrix
// pipeline, sharing no code with PinholeCamera::project_local.
inline Eigen::Vector2d homogeneous_projection_oracle(const PinholeCamera& cam, const Pose& pose,
                                                     const Eigen::Vector3d& point) {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T.block<3, 3>(0, 0) = pose.rotation();
  T.block<3, 1>(0, 3) = pose.translation();
  Eigen::Matrix<double, 3, 4> P = Eigen::Matrix<double, 3, 4>::Zero();
  P(0, 0) = cam.fx;
  P(1, 1) = cam.fy;
  P(0, 2) = cam.cx;
  P(1, 2) = cam.cy;
  P(2, 2) = 1.0;
  const Eigen::Vector4d xh(point.x(), point.y(), point.z(), 1.0);
  const Eigen::Vector3d uvw = P * (T * xh);
  return Eigen::Vector2d(uvw.x() / uvw.z(), uvw.y() / uvw.z());
}

inline PinholeCamera test_camera() {
  PinholeCamera cam;
  cam.fx = 240.0;
  cam.fy = 240.0;
  cam.cx = 160.0;
  cam.cy = 120.0;
  cam.width = 320;
  cam.height = 240;
  return cam;
}

}  // namespace evptam::testing

#endif  // EVPTAM_TEST_SUPPORT_HPP
