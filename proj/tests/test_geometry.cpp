#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "evptam/geometry.hpp"
#include "test_support.hpp"

using namespace evptam;
namespace et = evptam::testing;

TEST_CASE("se3_exp of the zero increment is the identity") {
  const Pose p = se3_exp(PoseIncrement::Zero());
  CHECK(p.isApprox(Pose::Identity(), 1e-12));
}

TEST_CASE("se3_exp matches the direct quaternion-to-matrix formula") {
  PoseIncrement mu;
  mu.delta_quaternion << 0.0, 0.0, std::sin(M_PI / 4.0), std::cos(M_PI / 4.0);
  const Pose p = se3_exp(mu);

  // 90 degrees about z: direct formula R = I + sin(a) K + (1-cos(a)) K^2.
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((p.rotation() - expected).norm() < 1e-12);

  // row-orthonormality of the produced rotation
  const Eigen::Matrix3d rrt = p.rotation() * p.rotation().transpose();
  CHECK((rrt - Eigen::Matrix3d::Identity()).norm() < 1e-12);

  // generic quaternion-to-matrix oracle on random increments
  auto& gen = et::rng(101);
  for (int i = 0; i < 200; ++i) {
    const PoseIncrement m = et::random_increment(gen);
    const double x = m.delta_quaternion[0], y = m.delta_quaternion[1],
                 z = m.delta_quaternion[2], w = m.delta_quaternion[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    CHECK((se3_exp(m).rotation() - r).norm() < 1e-12);
  }
}

TEST_CASE("se3 exp/log round-trip over 1000 random increments") {
  auto& gen = et::rng(102);
  double max_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const PoseIncrement mu = et::random_increment(gen);
    const PoseIncrement back = se3_log(se3_exp(mu));
    max_err = std::max(max_err, (back.delta_translation - mu.delta_translation).norm());
    max_err = std::max(max_err, (back.delta_quaternion - mu.delta_quaternion).norm());
  }
  CHECK(max_err < 1e-9);
}

TEST_CASE("se3_exp is continuous at zero (tangent scaling)") {
  auto& gen = et::rng(103);
  Eigen::Matrix<double, 6, 1> xi;
  xi << et::random_vector(gen), et::random_vector(gen).normalized() * 2.0;
  double prev = 1e9;
  for (double eps : {1e-1, 1e-3, 1e-5, 1e-7}) {
    const Pose p = se3_exp(PoseIncrement::FromTangent(Eigen::Matrix<double, 6, 1>(eps * xi)));
    const double dist = (p.matrix() - Eigen::Matrix4d::Identity()).norm();
    CHECK(dist < prev);
    prev = dist;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("SE(3) group axioms over randomized poses") {
  auto& gen = et::rng(104);
  for (int i = 0; i < 500; ++i) {
    const Pose a = et::random_pose(gen);
    const Pose b = et::random_pose(gen);
    const Pose c = et::random_pose(gen);

    CHECK((a * a.inverse()).isApprox(Pose::Identity(), 1e-9));
    CHECK((a.inverse() * a).isApprox(Pose::Identity(), 1e-9));
    CHECK(((a * b) * c).isApprox(a * (b * c), 1e-9));
    CHECK((a * Pose::Identity()).isApprox(a, 1e-12));

    const Eigen::Matrix3d r = a.rotation();
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("projection basics") {
  PinholeCamera cam = et::test_camera();
  cam.cx = 320.0;
  cam.cy = 240.0;
  cam.width = 640;
  cam.height = 480;

  SUBCASE("optical axis lands on the principal point") {
    const Eigen::Vector2d px = project(cam, Pose::Identity(), Eigen::Vector3d(0, 0, 1));
    CHECK(px.x() == doctest::Approx(320.0));
    CHECK(px.y() == doctest::Approx(240.0));
  }

  SUBCASE("plain arithmetic case") {
    cam.fx = 100.0;
    cam.fy = 100.0;
    const Eigen::Vector2d px = project(cam, Pose::Identity(), Eigen::Vector3d(1, 0, 2));
    CHECK(px.x() == doctest::Approx(370.0));
    CHECK(px.y() == doctest::Approx(240.0));
  }

  SUBCASE("non-positive depth throws") {
    CHECK_THROWS_AS(project(cam, Pose::Identity(), Eigen::Vector3d(0, 0, -1.0)),
                    NonPositiveDepth);
    CHECK_THROWS_AS(project(cam, Pose::Identity(), Eigen::Vector3d(0, 0, 0.0)),
                    NonPositiveDepth);
  }
}

TEST_CASE("random projections match the homogeneous-matrix oracle") {
  auto& gen = et::rng(105);
  const PinholeCamera cam = et::test_camera();
  int checked = 0;
  while (checked < 1000) {
    const Pose pose = et::random_pose(gen);
    const Eigen::Vector3d point = et::random_vector(gen, 5.0);
    if (!((pose * point).z() > 0.1)) continue;
    const Eigen::Vector2d ours = project(cam, pose, point);
    const Eigen::Vector2d oracle = et::homogeneous_projection_oracle(cam, pose, point);
    CHECK((ours - oracle).norm() < 1e-9);
    ++checked;
  }
}

TEST_CASE("unproject inverts project for positive depths") {
  auto& gen = et::rng(106);
  const PinholeCamera cam = et::test_camera();
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d x(et::uniform(gen, -3, 3), et::uniform(gen, -2, 2),
                            et::uniform(gen, 0.1, 30.0));
    const Eigen::Vector2d px = cam.project_local(x);
    CHECK((cam.unproject(px, x.z()) - x).norm() < 1e-9);
  }
}

TEST_CASE("triangulation") {
  const PinholeCamera cam = et::test_camera();
  const Pose T_lr(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.2, 0.0, 0.0));

  SUBCASE("recovers a forward-projected point") {
    const Eigen::Vector3d x(0.0, 0.0, 5.0);
    const Eigen::Vector2d px_l = cam.project_local(x);
    const Eigen::Vector2d px_r = cam.project_local(T_lr.inverse() * x);
    const Eigen::Vector3d back = triangulate(cam, cam, T_lr, px_l, px_r);
    CHECK((back - x).norm() < 1e-6);
  }

  SUBCASE("zero-disparity parallel rays are degenerate") {
    const Eigen::Vector2d px(160.0, 120.0);
    CHECK_THROWS_AS(triangulate(cam, cam, T_lr, px, px), DegenerateRays);
  }

  SUBCASE("100 random noiseless scene points within 1e-6") {
    auto& gen = et::rng(107);
    double max_err = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector3d x(et::uniform(gen, -3, 3), et::uniform(gen, -2, 2),
                              et::uniform(gen, 0.5, 25.0));
      const Eigen::Vector2d px_l = cam.project_local(x);
      const Eigen::Vector2d px_r = cam.project_local(T_lr.inverse() * x);
      max_err = std::max(max_err, (triangulate(cam, cam, T_lr, px_l, px_r) - x).norm());
    }
    CHECK(max_err < 1e-6);
  }
}

TEST_CASE("project and triangulate stay mutually consistent inside the frustum") {
  auto& gen = et::rng(108);
  const PinholeCamera cam = et::test_camera();
  const Pose T_lr(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.2, 0.0, 0.0));
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d x(et::uniform(gen, -2, 2), et::uniform(gen, -1.5, 1.5),
                            et::uniform(gen, 0.1, 30.0));
    const Eigen::Vector2d px_l = cam.project_local(x);
    const Eigen::Vector3d xr = T_lr.inverse() * x;
    if (!(xr.z() > 0.0)) continue;
    const Eigen::Vector2d px_r = cam.project_local(xr);
    CHECK((triangulate(cam, cam, T_lr, px_l, px_r) - x).norm() < 1e-6);
  }
}

TEST_CASE("calibration file round trip and golden keys") {
  RigCalibration rig;
  rig.cam_left = et::test_camera();
  rig.cam_right = et::test_camera();
  rig.dvs_left = PinholeCamera{230.0, 231.0, 158.0, 118.0, 320, 240};
  rig.dvs_right = rig.dvs_left;
  rig.T_cd_left = Pose(Eigen::Quaterniond(Eigen::AngleAxisd(0.01, Eigen::Vector3d::UnitY())),
                       Eigen::Vector3d(0.01, 0.005, -0.002));
  rig.T_cd_right = rig.T_cd_left;
  rig.T_lr = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.2, 0.0, 0.0));
  rig.align_left = Eigen::Vector2d(-160.0, -235.0);
  rig.align_right = Eigen::Vector2d(-160.0, -235.0);
  rig.exposure_time = 0.004;

  const std::string path = (std::filesystem::temp_directory_path() / "rig_test.txt").string();
  write_rig_calibration(rig, path);
  const RigCalibration back = read_rig_calibration(path);

  CHECK(back.cam_left.fx == doctest::Approx(rig.cam_left.fx));
  CHECK(back.dvs_left.cy == doctest::Approx(rig.dvs_left.cy));
  CHECK(back.T_cd_left.translation().isApprox(rig.T_cd_left.translation(), 1e-12));
  CHECK(back.T_lr.translation().isApprox(rig.T_lr.translation(), 1e-12));
  CHECK(back.align_left.isApprox(rig.align_left, 1e-12));
  CHECK(back.exposure_time == doctest::Approx(rig.exposure_time));

  // golden key set: the exact names the format commits to
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const char* key :
       {"cam_left.fx", "cam_left.width", "cam_right.cy", "dvs_left.fy", "dvs_right.height",
        "T_cd_left.t", "T_cd_left.q", "T_cd_right.t", "T_lr.t", "T_lr.q", "align_left",
        "align_right", "exposure_time"}) {
    CAPTURE(key);
    CHECK(text.find(key) != std::string::npos);
  }
}

TEST_CASE("calibration validation rejects bad rigs") {
  RigCalibration rig;
  rig.cam_left = rig.cam_right = rig.dvs_left = rig.dvs_right = et::test_camera();
  rig.T_lr = Pose();  // zero baseline
  CHECK_THROWS_AS(rig.validate(), ConfigError);
}
