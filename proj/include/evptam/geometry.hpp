#ifndef EVPTAM_GEOMETRY_HPP
#define EVPTAM_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "evptam/errors.hpp"

// Pose representation, pinhole cameras and the calibrated four-camera rig.
// Everything here is a pure value type; safe to use from any thread.

namespace evptam {

// ---------------------------------------------------------------------------
// Pose increment: 3 translation components + quaternion stored (x, y, z, w).
// The quaternion order is fixed project-wide, including every file format.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PoseIncrementT {
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Vector4 = Eigen::Matrix<Scalar, 4, 1>;

  Vector3 delta_translation = Vector3::Zero();
  Vector4 delta_quaternion = Vector4::Zero();  // (x, y, z, w)

  static PoseIncrementT Zero() { return PoseIncrementT{}; }

  // Build from a 6-dof tangent (translation, rotation vector).
  static PoseIncrementT FromTangent(const Eigen::Matrix<Scalar, 6, 1>& xi) {
    PoseIncrementT mu;
    mu.delta_translation = xi.template head<3>();
    const Vector3 omega = xi.template tail<3>();
    const Scalar angle = omega.norm();
    Eigen::Quaternion<Scalar> q;
    if (angle < Scalar(1e-12)) {
      q = Eigen::Quaternion<Scalar>::Identity();
    } else {
      q = Eigen::Quaternion<Scalar>(Eigen::AngleAxis<Scalar>(angle, omega / angle));
    }
    mu.delta_quaternion << q.x(), q.y(), q.z(), q.w();
    return mu;
  }
};

// ---------------------------------------------------------------------------
// Rigid transform. rotation() is orthonormal with det +1; applying a Pose maps
// a point through R*x + t. Keyframe poses throughout the system are
// world-to-camera transforms; inverses are taken explicitly at boundaries
// (trajectory files, pose graph) that want camera-in-world.
// ---------------------------------------------------------------------------

template <typename Scalar>
class PoseT {
 public:
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
  using Quaternion = Eigen::Quaternion<Scalar>;

  PoseT() : q_(Quaternion::Identity()), t_(Vector3::Zero()) {}
  PoseT(const Quaternion& q, const Vector3& t) : q_(q.normalized()), t_(t) {}
  PoseT(const Matrix3& R, const Vector3& t) : q_(Quaternion(R).normalized()), t_(t) {}

  static PoseT Identity() { return PoseT(); }

  const Quaternion& quaternion() const { return q_; }
  Matrix3 rotation() const { return q_.toRotationMatrix(); }
  const Vector3& translation() const { return t_; }
  Vector3& translation() { return t_; }

  Matrix4 matrix() const {
    Matrix4 T = Matrix4::Identity();
    T.template block<3, 3>(0, 0) = rotation();
    T.template block<3, 1>(0, 3) = t_;
    return T;
  }

  Vector3 operator*(const Vector3& x) const { return q_ * x + t_; }

  PoseT operator*(const PoseT& rhs) const {
    return PoseT(q_ * rhs.q_, q_ * rhs.t_ + t_);
  }

  PoseT inverse() const {
    const Quaternion qi = q_.conjugate();
    return PoseT(qi, -(qi * t_));
  }

  bool isApprox(const PoseT& other, Scalar tol = Scalar(1e-9)) const {
    const Scalar dq = std::min((q_.coeffs() - other.q_.coeffs()).norm(),
                               (q_.coeffs() + other.q_.coeffs()).norm());
    return dq <= tol && (t_ - other.t_).norm() <= tol;
  }

 private:
  Quaternion q_;
  Vector3 t_;
};

// ---------------------------------------------------------------------------
// Increment exp/log. The 7-component increment carries an explicit unit
// quaternion, so exp is normalize-then-wrap rather than a twist map: an
// all-zero quaternion block denotes the identity rotation. log picks the
// canonical sign qw >= 0, so log(exp(mu)) = mu whenever mu's rotation angle
// is below pi and qw > 0.
// ---------------------------------------------------------------------------

template <typename Scalar>
PoseT<Scalar> se3_exp(const PoseIncrementT<Scalar>& mu) {
  const Scalar n = mu.delta_quaternion.norm();
  Eigen::Quaternion<Scalar> q;
  if (n < Scalar(1e-9)) {
    q = Eigen::Quaternion<Scalar>::Identity();
  } else {
    q = Eigen::Quaternion<Scalar>(mu.delta_quaternion[3] / n, mu.delta_quaternion[0] / n,
                                  mu.delta_quaternion[1] / n, mu.delta_quaternion[2] / n);
  }
  return PoseT<Scalar>(q, mu.delta_translation);
}

template <typename Scalar>
PoseIncrementT<Scalar> se3_log(const PoseT<Scalar>& pose) {
  PoseIncrementT<Scalar> mu;
  mu.delta_translation = pose.translation();
  Eigen::Quaternion<Scalar> q = pose.quaternion();
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  mu.delta_quaternion << q.x(), q.y(), q.z(), q.w();
  return mu;
}

// ---------------------------------------------------------------------------
// so(3) helpers and the 6-dof local chart the solver optimizes on.
// oplus left-composes a decoupled (translation, rotation-vector) increment;
// log6 is its inverse up to the usual angle wrap.
// ---------------------------------------------------------------------------

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> skew(const Eigen::Matrix<Scalar, 3, 1>& v) {
  Eigen::Matrix<Scalar, 3, 3> s;
  s << Scalar(0), -v.z(), v.y(), v.z(), Scalar(0), -v.x(), -v.y(), v.x(), Scalar(0);
  return s;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> so3_exp(const Eigen::Matrix<Scalar, 3, 1>& omega) {
  const Scalar angle = omega.norm();
  if (angle < Scalar(1e-12)) {
    return Eigen::Matrix<Scalar, 3, 3>::Identity() + skew<Scalar>(omega);
  }
  return Eigen::AngleAxis<Scalar>(angle, omega / angle).toRotationMatrix();
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> so3_log(const Eigen::Matrix<Scalar, 3, 3>& R) {
  Eigen::AngleAxis<Scalar> aa(R);
  return aa.angle() * aa.axis();
}

template <typename Scalar>
PoseT<Scalar> oplus(const PoseT<Scalar>& pose, const Eigen::Matrix<Scalar, 6, 1>& delta) {
  const Eigen::Matrix<Scalar, 3, 1> omega = delta.template tail<3>();
  const PoseT<Scalar> d(so3_exp<Scalar>(omega),
                        Eigen::Matrix<Scalar, 3, 1>(delta.template head<3>()));
  return d * pose;
}

// 6-dof residual coordinates of a pose relative to identity: (t, log R).
template <typename Scalar>
Eigen::Matrix<Scalar, 6, 1> log6(const PoseT<Scalar>& pose) {
  Eigen::Matrix<Scalar, 6, 1> xi;
  xi.template head<3>() = pose.translation();
  xi.template tail<3>() = so3_log<Scalar>(pose.rotation());
  return xi;
}

// ---------------------------------------------------------------------------
// Pinhole camera (rectified, no distortion).
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PinholeCameraT {
  using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

  Scalar fx = Scalar(1), fy = Scalar(1);
  Scalar cx = Scalar(0), cy = Scalar(0);
  int width = 0, height = 0;

  Matrix3 K() const {
    Matrix3 k = Matrix3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }

  // Camera-frame point -> pixel. Throws NonPositiveDepth for z <= 0.
  Vector2 project_local(const Vector3& xc) const {
    if (!(xc.z() > Scalar(0))) {
      throw NonPositiveDepth("projection of point with non-positive depth");
    }
    return Vector2(fx * xc.x() / xc.z() + cx, fy * xc.y() / xc.z() + cy);
  }

  // Pixel + depth -> camera-frame point.
  Vector3 unproject(const Vector2& px, Scalar depth) const {
    return Vector3((px.x() - cx) / fx * depth, (px.y() - cy) / fy * depth, depth);
  }

  // Unit-depth ray through a pixel.
  Vector3 ray(const Vector2& px) const { return unproject(px, Scalar(1)); }

  bool contains(const Vector2& px) const {
    return px.x() >= Scalar(0) && px.y() >= Scalar(0) && px.x() < Scalar(width) &&
           px.y() < Scalar(height);
  }
};

// World point through a world-to-camera pose, then the pinhole map.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> project(const PinholeCameraT<Scalar>& cam, const PoseT<Scalar>& pose,
                                    const Eigen::Matrix<Scalar, 3, 1>& point) {
  return cam.project_local(pose * point);
}

// Non-throwing variant for hot paths; returns false when depth <= 0.
template <typename Scalar>
bool try_project(const PinholeCameraT<Scalar>& cam, const PoseT<Scalar>& pose,
                 const Eigen::Matrix<Scalar, 3, 1>& point, Eigen::Matrix<Scalar, 2, 1>* px,
                 Scalar* depth = nullptr) {
  const Eigen::Matrix<Scalar, 3, 1> xc = pose * point;
  if (!(xc.z() > Scalar(0))) return false;
  (*px) << cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy;
  if (depth) *depth = xc.z();
  return true;
}

// ---------------------------------------------------------------------------
// Midpoint triangulation. T_lr maps right-camera coordinates into the left
// camera frame; the result is expressed in the left camera frame. Throws
// DegenerateRays when the two rays are parallel within 1e-12 of angular
// separation.
// ---------------------------------------------------------------------------

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> triangulate(const PinholeCameraT<Scalar>& cam_l,
                                        const PinholeCameraT<Scalar>& cam_r,
                                        const PoseT<Scalar>& T_lr,
                                        const Eigen::Matrix<Scalar, 2, 1>& px_l,
                                        const Eigen::Matrix<Scalar, 2, 1>& px_r) {
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  const Vector3 d1 = cam_l.ray(px_l).normalized();
  const Vector3 o2 = T_lr.translation();
  const Vector3 d2 = (T_lr.quaternion() * cam_r.ray(px_r)).normalized();

  if (d1.cross(d2).norm() < Scalar(1e-12)) {
    throw DegenerateRays("parallel rays in triangulation");
  }

  // Closest points on the two rays: o1 + s*d1 and o2 + u*d2, o1 = 0.
  const Scalar b = d1.dot(d2);
  const Vector3 w = -o2;  // o1 - o2
  const Scalar d = d1.dot(w);
  const Scalar e = d2.dot(w);
  const Scalar denom = Scalar(1) - b * b;
  const Scalar s = (b * e - d) / denom;
  const Scalar u = (e - b * d) / denom;
  return (s * d1 + (o2 + u * d2)) / Scalar(2);
}

using PoseIncrement = PoseIncrementT<double>;
using Pose = PoseT<double>;
using PinholeCamera = PinholeCameraT<double>;
using Vector2d = Eigen::Vector2d;
using Vector3d = Eigen::Vector3d;

// ---------------------------------------------------------------------------
// Stereo hybrid rig: frame cameras, event cameras, the event-to-frame
// extrinsics per side, the stereo baseline (right-to-left), per-side pixel
// alignment offsets and the frame exposure time.
// ---------------------------------------------------------------------------

enum class Side { Left, Right };

struct RigCalibration {
  PinholeCamera cam_left, cam_right;  // frame cameras
  PinholeCamera dvs_left, dvs_right;  // event cameras
  Pose T_cd_left, T_cd_right;         // event -> frame camera, per side
  Pose T_lr;                          // right camera -> left camera
  Eigen::Vector2d align_left = Eigen::Vector2d::Zero();
  Eigen::Vector2d align_right = Eigen::Vector2d::Zero();
  double exposure_time = 0.0;  // seconds

  const PinholeCamera& frame_cam(Side s) const { return s == Side::Left ? cam_left : cam_right; }
  const PinholeCamera& event_cam(Side s) const { return s == Side::Left ? dvs_left : dvs_right; }
  const Pose& T_cd(Side s) const { return s == Side::Left ? T_cd_left : T_cd_right; }
  const Eigen::Vector2d& align(Side s) const { return s == Side::Left ? align_left : align_right; }

  void validate() const;  // throws ConfigError on violated invariants
};

// Key-value calibration file, one rig per document. Exact key names are
// pinned by a golden-file test; see README for the format.
RigCalibration read_rig_calibration(const std::string& path);
void write_rig_calibration(const RigCalibration& rig, const std::string& path);

}  // namespace evptam

#endif  // EVPTAM_GEOMETRY_HPP
