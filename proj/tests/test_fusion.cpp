#include <doctest.h>

#include <random>

#include "evptam/fusion.hpp"
#include "test_support.hpp"

using namespace evptam;
namespace et = evptam::testing;

namespace {

RigCalibration identity_rig(int width = 32, int height = 24) {
  RigCalibration rig;
  PinholeCamera cam;
  cam.fx = cam.fy = 30.0;
  cam.cx = width / 2.0 - 0.5;
  cam.cy = height / 2.0 - 0.5;
  cam.width = width;
  cam.height = height;
  rig.cam_left = rig.cam_right = rig.dvs_left = rig.dvs_right = cam;
  rig.T_lr = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.2, 0, 0));
  return rig;
}

E3CT random_sparse_tensor(std::mt19937& gen, int height, int width, int hot) {
  E3CT t = E3CT::zero(height, width, 0.0);
  std::uniform_int_distribution<int> px(2, width - 3), py(2, height - 3), c(0, 2);
  std::uniform_real_distribution<float> v(0.2f, 1.0f);
  for (int i = 0; i < hot; ++i) t.channels[c(gen)](py(gen), px(gen)) = v(gen);
  return t;
}

}  // namespace

TEST_CASE("warp collapses to identity for a coincident rig") {
  auto& gen = et::rng(401);
  const RigCalibration rig = identity_rig();
  const E3CT tensor = random_sparse_tensor(gen, 24, 32, 40);
  for (double lambda : {0.5, 2.0, 7.3}) {
    const E3CT out = warp_e3ct(tensor, rig, Side::Left, lambda);
    for (int c = 0; c < 3; ++c) {
      CHECK((out.channels[c] == tensor.channels[c]).all());
    }
  }
}

TEST_CASE("a pure alignment offset shifts the grid") {
  auto& gen = et::rng(402);
  RigCalibration rig = identity_rig();
  rig.align_left = Eigen::Vector2d(5.0, -3.0);
  const E3CT tensor = random_sparse_tensor(gen, 24, 32, 30);
  const E3CT out = warp_e3ct(tensor, rig, Side::Left, 4.0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 32; ++x) {
        const int sx = x + 5, sy = y - 3;
        const float expected = (sx >= 0 && sy >= 0 && sx < 32 && sy < 24)
                                   ? tensor.channels[c](y, x)
                                   : 0.f;  // shifted out of bounds: dropped
        if (sx >= 0 && sy >= 0 && sx < 32 && sy < 24) {
          CHECK(out.channels[c](sy, sx) == expected);
        }
      }
    }
  }
}

TEST_CASE("warped event pixels land near frame-camera projections of the same points") {
  // rig with a real event->frame extrinsic; all sources on the plane z = 5
  RigCalibration rig = identity_rig(64, 48);
  rig.dvs_left.fx = rig.dvs_left.fy = 28.0;
  rig.T_cd_left = Pose(Eigen::Quaterniond(Eigen::AngleAxisd(0.01, Eigen::Vector3d::UnitY())),
                       Eigen::Vector3d(0.02, 0.01, 0.0));
  const double lambda = 5.0;

  int checked = 0;
  for (int y = 8; y < 40; y += 5) {
    for (int x = 8; x < 56; x += 5) {
      E3CT tensor = E3CT::zero(48, 64, 0.0);
      tensor.channels[1](y, x) = 1.0f;
      const E3CT out = warp_e3ct(tensor, rig, Side::Left, lambda);

      // independent forward projection of the same 3D point
      const Eigen::Vector3d point_dvs = rig.dvs_left.unproject(Eigen::Vector2d(x, y), lambda);
      const Eigen::Vector3d point_cam = rig.T_cd_left * point_dvs;
      const Eigen::Vector2d expected = rig.cam_left.project_local(point_cam);
      if (!rig.cam_left.contains(expected)) continue;

      int oy = -1, ox = -1;
      float best = 0.f;
      for (int yy = 0; yy < 48; ++yy) {
        for (int xx = 0; xx < 64; ++xx) {
          if (out.channels[1](yy, xx) > best) {
            best = out.channels[1](yy, xx);
            oy = yy;
            ox = xx;
          }
        }
      }
      REQUIRE(best > 0.f);
      CHECK((Eigen::Vector2d(ox, oy) - expected).norm() <= 0.5 * std::numbers::sqrt2 + 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("alignment calibration") {
  auto& gen = et::rng(403);

  SUBCASE("recovers an exact constant offset") {
    const Eigen::Vector2d truth(-160.0, -235.0);
    std::vector<Eigen::Vector2d> frame_px, warped_px;
    for (int i = 0; i < 40; ++i) {
      const Eigen::Vector2d w(et::uniform(gen, 0, 640), et::uniform(gen, 0, 480));
      warped_px.push_back(w);
      frame_px.push_back(w + truth);
    }
    const AlignmentEstimate est = calibrate_alignment(frame_px, warped_px);
    CHECK((est.offset - truth).norm() < 1e-9);
    CHECK(est.rms_residual < 1e-9);
  }

  SUBCASE("zero-offset matches give a zero offset") {
    std::vector<Eigen::Vector2d> px;
    for (int i = 0; i < 15; ++i) {
      px.emplace_back(et::uniform(gen, 0, 320), et::uniform(gen, 0, 240));
    }
    const AlignmentEstimate est = calibrate_alignment(px, px);
    CHECK(est.offset.norm() == 0.0);
  }

  SUBCASE("noisy matches recover the offset within 3 sigma / sqrt(N)") {
    const Eigen::Vector2d truth(355.0, 40.0);
    const int n = 500;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Eigen::Vector2d> frame_px, warped_px;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d w(et::uniform(gen, 0, 640), et::uniform(gen, 0, 480));
      warped_px.push_back(w);
      frame_px.push_back(w + truth + Eigen::Vector2d(noise(gen), noise(gen)));
    }
    const AlignmentEstimate est = calibrate_alignment(frame_px, warped_px);
    CHECK((est.offset - truth).norm() < 3.0 / std::sqrt(static_cast<double>(n)) * 2.0);

    // closed-form mean-of-differences oracle
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (int i = 0; i < n; ++i) mean += frame_px[i] - warped_px[i];
    mean /= n;
    CHECK((est.offset - mean).norm() < 1e-12);
  }

  SUBCASE("fewer than 10 matches is an error") {
    std::vector<Eigen::Vector2d> px(9, Eigen::Vector2d(1, 1));
    CHECK_THROWS_AS(calibrate_alignment(px, px), InsufficientMatches);
  }
}

TEST_CASE("beta selection rules") {
  FusionConfig cfg;  // cap 0.3, floor 50

  SUBCASE("APS-biased min rule") {
    const auto [beta, mode] = select_beta(0.1, 1.0, 100, cfg);
    CHECK(mode == FusionMode::ApsBiased);
    CHECK(beta == doctest::Approx(0.1));
  }

  SUBCASE("DVS-biased max rule hits the cap") {
    const auto [beta, mode] = select_beta(0.1, 1.0, 10, cfg);
    CHECK(mode == FusionMode::DvsBiased);
    CHECK(beta == doctest::Approx(0.3));  // raw 0.9 capped
  }

  SUBCASE("rules coincide at the midpoint (uncapped)") {
    FusionConfig open = cfg;
    open.beta_cap = 1.0;
    const auto aps = select_beta(0.5, 1.0, 100, open);
    const auto dvs = select_beta(0.5, 1.0, 10, open);
    CHECK(aps.first == doctest::Approx(0.5));
    CHECK(dvs.first == doctest::Approx(0.5));
  }

  SUBCASE("the floor is a strict less-than boundary") {
    CHECK(select_beta(0.2, 1.0, cfg.mode_feature_floor, cfg).second == FusionMode::ApsBiased);
    CHECK(select_beta(0.2, 1.0, cfg.mode_feature_floor - 1, cfg).second ==
          FusionMode::DvsBiased);
  }

  SUBCASE("mode switching is stateless over oscillating feature counts") {
    const int counts[] = {60, 40, 55, 49, 50, 51, 10, 90, 49, 50};
    for (int c : counts) {
      const auto [beta, mode] = select_beta(0.25, 1.0, c, cfg);
      CHECK(mode == (c < cfg.mode_feature_floor ? FusionMode::DvsBiased
                                                : FusionMode::ApsBiased));
    }
  }

  SUBCASE("non-positive intensity max is rejected") {
    CHECK_THROWS_AS(select_beta(0.0, 0.0, 100, cfg), ConfigError);
  }
}

TEST_CASE("cross-dissolve blending") {
  const Grid c = Grid::Constant(8, 8, 0.4f);
  const Grid d = Grid::Constant(8, 8, 0.8f);

  SUBCASE("beta 0 returns the frame bit-exactly") {
    auto& gen = et::rng(404);
    Grid noisy(8, 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) noisy(y, x) = static_cast<float>(et::uniform(gen, 0, 1));
    }
    const Grid out = fuse(noisy, d, 0.0);
    CHECK((out == noisy).all());
  }

  SUBCASE("beta 1 returns the events") {
    const Grid out = fuse(c, d, 1.0);
    CHECK((out == d).all());
  }

  SUBCASE("constant-image arithmetic") {
    const Grid out = fuse(c, d, 0.3);
    CHECK(out(4, 4) == doctest::Approx(0.52).epsilon(1e-6));
  }

  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS_AS(fuse(c, Grid::Zero(4, 4), 0.5), DimensionMismatch);
  }

  SUBCASE("monotone in beta toward the events image") {
    double prev = -1.0;
    for (double beta : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      const double v = fuse(c, d, beta)(0, 0);
      CHECK(v > prev);
      prev = v;
    }
  }

  SUBCASE("affine in both arguments") {
    const double beta = 0.37;
    const Grid a = Grid::Constant(8, 8, 0.2f);
    const Grid b = Grid::Constant(8, 8, 0.6f);
    // f(C, a*D1 + (1-a)*D2) == a*f(C,D1) + (1-a)*f(C,D2)
    const float alpha = 0.4f;
    const Grid mix = alpha * a + (1.f - alpha) * b;
    const Grid lhs = fuse(c, mix, beta);
    const Grid rhs = alpha * fuse(c, a, beta) + (1.f - alpha) * fuse(c, b, beta);
    CHECK(((lhs - rhs).abs() < 1e-6f).all());
  }
}

TEST_CASE("channel collapse clamps into [0, 1]") {
  E3CT t = E3CT::zero(4, 4, 0.0);
  t.channels[0](1, 1) = 2.0f;
  t.channels[1](1, 1) = 2.0f;
  t.channels[2](1, 1) = 2.0f;
  t.channels[0](2, 2) = 0.6f;
  const Grid g = collapse_to_intensity(t);
  CHECK(g(1, 1) == 1.0f);
  CHECK(g(2, 2) == doctest::Approx(0.2f));
  CHECK(g(0, 0) == 0.0f);
}
