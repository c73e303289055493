#include <doctest.h>

#include <random>

#include "evptam/mapping.hpp"
#include "evptam/solver.hpp"
#include "test_support.hpp"

using namespace evptam;
namespace et = evptam::testing;

namespace {

// Residual over a 3-dof point block with an analytic Jacobian.
void add_point_residual(Problem& p, int block, int dim,
                        std::function<void(const Eigen::Vector3d&, Eigen::VectorXd&,
                                           Eigen::MatrixXd&)>
                            fn,
                        double weight = 1.0) {
  p.add_residual(
      dim, {Problem::point_ref(block)},
      [fn, block, dim](const Problem& prob, Eigen::VectorXd& r,
                       std::vector<Eigen::MatrixXd>* jac) {
        Eigen::MatrixXd j(dim, 3);
        fn(prob.point(block), r, j);
        if (jac) (*jac)[0] = j;
        return r.allFinite();
      },
      weight);
}

// Small synthetic bundle: poses on an arc looking at a point cloud, exact
// projections as measurements, then perturbed as the optimization start.
struct ToyBA {
  Problem problem;
  std::vector<int> pose_blocks, point_blocks;
};

ToyBA make_toy_ba(std::mt19937& gen, int num_poses, int num_points, double perturb) {
  ToyBA toy;
  const PinholeCamera cam = et::test_camera();

  std::vector<Pose> gt_poses;
  for (int k = 0; k < num_poses; ++k) {
    const Eigen::Vector3d position(0.4 * k, 0.1 * std::sin(1.0 + k), 0.0);
    gt_poses.push_back(
        Pose(Eigen::Quaterniond(Eigen::AngleAxisd(0.03 * k, Eigen::Vector3d::UnitY())),
             position)
            .inverse());  // world -> camera
  }
  std::vector<Eigen::Vector3d> gt_points;
  for (int i = 0; i < num_points; ++i) {
    gt_points.emplace_back(et::uniform(gen, -2.5, 2.5), et::uniform(gen, -1.5, 1.5),
                           et::uniform(gen, 4.0, 8.0));
  }

  for (int k = 0; k < num_poses; ++k) {
    Pose start = gt_poses[k];
    if (k > 0 && perturb > 0.0) {
      Eigen::Matrix<double, 6, 1> d;
      d << et::random_vector(gen, perturb), et::random_vector(gen, perturb);
      start = oplus(start, d);
    }
    toy.pose_blocks.push_back(toy.problem.add_pose(start, k == 0));
  }
  for (int i = 0; i < num_points; ++i) {
    Eigen::Vector3d start = gt_points[i];
    if (perturb > 0.0) start += et::random_vector(gen, perturb);
    toy.point_blocks.push_back(toy.problem.add_point(start));
  }

  for (int k = 0; k < num_poses; ++k) {
    for (int i = 0; i < num_points; ++i) {
      Eigen::Vector2d z;
      if (!try_project(cam, gt_poses[k], gt_points[i], &z)) continue;
      const int pb = toy.pose_blocks[k];
      const int lb = toy.point_blocks[i];
      toy.problem.add_residual(
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
          });
    }
  }
  return toy;
}

}  // namespace

TEST_CASE("huber loss values and weights") {
  SUBCASE("zero residual") {
    const auto [loss, weight] = huber(0.0, 1.0);
    CHECK(loss == 0.0);
    CHECK(weight == 1.0);
  }
  SUBCASE("branch continuity at the threshold") {
    const double delta = 0.7;
    const auto below = huber(delta * delta * (1.0 - 1e-12), delta);
    const auto above = huber(delta * delta * (1.0 + 1e-12), delta);
    CHECK(std::abs(below.first - above.first) < 1e-12);
    CHECK(std::abs(below.second - above.second) < 1e-9);
  }
  SUBCASE("linear branch value") {
    const auto [loss, weight] = huber(4.0, 1.0);  // |r| = 2, delta = 1
    CHECK(loss == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(weight == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("gradient continuity at the branch point") {
    // d loss / d |r|: 2|r| below, 2 delta above; equal at |r| = delta
    const double delta = 1.3;
    const double h = 1e-7;
    auto loss_at = [&](double rn) { return huber(rn * rn, delta).first; };
    const double g_below = (loss_at(delta) - loss_at(delta - h)) / h;
    const double g_above = (loss_at(delta + h) - loss_at(delta)) / h;
    CHECK(std::abs(g_below - g_above) < 1e-5);
    CHECK(std::abs(g_below - 2.0 * delta) < 1e-5);
  }
}

TEST_CASE("consistent linear least squares solves in one accepted step") {
  Problem p;
  const int b = p.add_point(Eigen::Vector3d(5.0, -3.0, 2.0));
  Eigen::Matrix3d a;
  a << 2, 1, 0, 1, 3, 1, 0, 1, 2;
  const Eigen::Vector3d x_true(0.3, -0.4, 1.2);
  const Eigen::Vector3d rhs = a * x_true;
  add_point_residual(p, b, 3,
                     [a, rhs](const Eigen::Vector3d& x, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                       r = a * x - rhs;
                       j = a;
                     });

  LMSettings settings;
  settings.initial_damping = 1e-12;
  const SolveReport report = lm_minimize(p, RobustLoss{1e12}, settings);
  REQUIRE(!report.trace.empty());
  CHECK(report.trace.front().accepted);
  CHECK(report.trace.front().cost < 1e-18);  // first accepted step lands on the solution
  CHECK((p.point(b) - x_true).norm() < 1e-10);
}

TEST_CASE("Rosenbrock converges to the known optimum") {
  // f = (1-x)^2 + 100 (y - x^2)^2 as residuals (1-x, 10(y - x^2), z)
  Problem p;
  const int b = p.add_point(Eigen::Vector3d(-1.2, 1.0, 0.0));
  add_point_residual(p, b, 3,
                     [](const Eigen::Vector3d& v, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                       r.resize(3);
                       r << 1.0 - v.x(), 10.0 * (v.y() - v.x() * v.x()), v.z();
                       j.setZero(3, 3);
                       j(0, 0) = -1.0;
                       j(1, 0) = -20.0 * v.x();
                       j(1, 1) = 10.0;
                       j(2, 2) = 1.0;
                     });

  LMSettings settings;
  settings.max_iterations = 200;
  const SolveReport report = lm_minimize(p, RobustLoss{1e12}, settings);
  CHECK((p.point(b).head<2>() - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-6);
  CHECK(report.final_cost < 1e-12);

  // independent oracle: plain gradient descent run long lands at the same spot
  Eigen::Vector2d gd(-1.2, 1.0);
  for (int i = 0; i < 2'000'000; ++i) {
    const double x = gd.x(), y = gd.y();
    const Eigen::Vector2d grad(-2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                               200.0 * (y - x * x));
    gd -= 1e-3 * grad;
  }
  CHECK((gd - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-2);
  CHECK((p.point(b).head<2>() - gd).norm() < 2e-2);
}

TEST_CASE("a problem at its optimum converges with zero accepted steps") {
  Problem p;
  const int b = p.add_point(Eigen::Vector3d(1.0, 2.0, 3.0));
  add_point_residual(p, b, 3,
                     [](const Eigen::Vector3d& x, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                       r = x - Eigen::Vector3d(1.0, 2.0, 3.0);
                       j = Eigen::Matrix3d::Identity();
                     });
  const SolveReport report = lm_minimize(p, RobustLoss{1.0}, LMSettings{});
  CHECK(report.status == SolveStatus::Converged);
  CHECK(report.accepted_steps == 0);
  CHECK((p.point(b) - Eigen::Vector3d(1.0, 2.0, 3.0)).norm() == 0.0);
}

TEST_CASE("accepted steps decrease cost; damping follows accept/reject") {
  auto& gen = et::rng(201);
  ToyBA toy = make_toy_ba(gen, 4, 20, 0.05);
  LMSettings settings;
  settings.max_iterations = 40;
  const SolveReport report = lm_minimize(toy.problem, RobustLoss{1.0}, settings);

  double last_cost = report.initial_cost;
  for (const auto& rec : report.trace) {
    if (rec.accepted) {
      CHECK(rec.cost < last_cost);
      last_cost = rec.cost;
    }
  }
  // damping state machine: each attempt's damping derives from the previous
  // attempt's outcome
  for (std::size_t i = 1; i < report.trace.size(); ++i) {
    const auto& prev = report.trace[i - 1];
    const auto& cur = report.trace[i];
    const double expected =
        prev.accepted ? prev.damping * settings.damping_down : prev.damping * settings.damping_up;
    CHECK(cur.damping == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(report.final_cost <= report.initial_cost);
  CHECK(report.accepted_steps > 0);
}

TEST_CASE("non-finite residuals at the start are reported") {
  Problem p;
  const int b = p.add_point(Eigen::Vector3d::Zero());
  add_point_residual(p, b, 3,
                     [](const Eigen::Vector3d&, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                       r = Eigen::Vector3d(std::nan(""), 0.0, 0.0);
                       j = Eigen::Matrix3d::Identity();
                     });
  CHECK_THROWS_AS(lm_minimize(p, RobustLoss{1.0}, LMSettings{}), NonFiniteResidual);
}

TEST_CASE("check_jacobian validates the reprojection Jacobians") {
  auto& gen = et::rng(202);
  SUBCASE("analytic reprojection Jacobian is within 1e-5 of central differences") {
    ToyBA toy = make_toy_ba(gen, 3, 10, 0.02);
    CHECK(check_jacobian(toy.problem, 1e-6) < 1e-5);
  }
  SUBCASE("linear residuals check out at machine precision") {
    Problem p;
    const int b = p.add_point(Eigen::Vector3d(0.5, -1.0, 2.0));
    Eigen::Matrix3d a;
    a << 1, 2, 0, 0, 1, 4, 3, 0, 1;
    add_point_residual(p, b, 3,
                       [a](const Eigen::Vector3d& x, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                         r = a * x;
                         j = a;
                       });
    CHECK(check_jacobian(p, 1e-6) < 1e-9);
  }
  SUBCASE("a deliberately wrong Jacobian is detected") {
    Problem p;
    const int b = p.add_point(Eigen::Vector3d(0.5, -1.0, 2.0));
    add_point_residual(p, b, 3,
                       [](const Eigen::Vector3d& x, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
                         r = 2.0 * x;
                         j = Eigen::Matrix3d::Identity();  // should be 2 I
                       });
    CHECK(check_jacobian(p, 1e-6) > 1e-2);
  }
}

TEST_CASE("Schur solve equals the dense solve on toy bundles") {
  auto& gen = et::rng(203);

  SUBCASE("2 poses / 5 points") {
    ToyBA toy = make_toy_ba(gen, 2, 5, 0.05);
    NormalEquations ne = assemble_normal_equations(toy.problem, RobustLoss{1.0}, 1e-4);
    const Eigen::VectorXd schur = solve_schur(ne);
    const Eigen::VectorXd dense = solve_dense(ne);
    CHECK((schur - dense).norm() < 1e-8);
  }

  SUBCASE("50 random instances up to 10 poses / 50 points") {
    for (int instance = 0; instance < 50; ++instance) {
      const int poses = std::min(10, 2 + static_cast<int>(et::uniform(gen, 0.0, 9.0)));
      const int points = std::min(50, 5 + static_cast<int>(et::uniform(gen, 0.0, 46.0)));
      ToyBA toy = make_toy_ba(gen, poses, points, 0.03);
      NormalEquations ne = assemble_normal_equations(toy.problem, RobustLoss{1.0}, 1e-4);
      const Eigen::VectorXd schur = solve_schur(ne);
      const Eigen::VectorXd dense = solve_dense(ne);
      REQUIRE(schur.size() == dense.size());
      CHECK((schur - dense).norm() < 1e-8 * std::max(1.0, dense.norm()));
    }
  }

  SUBCASE("single pose, no points reduces to a 6x6 dense solve") {
    auto& g2 = et::rng(204);
    const PinholeCamera cam = et::test_camera();
    Problem p;
    const Pose gt = et::random_pose(g2, 0.5);
    const int pose_id = p.add_pose(
        oplus(gt, Eigen::Matrix<double, 6, 1>(Eigen::Matrix<double, 6, 1>::Constant(0.01))));
    for (int i = 0; i < 12; ++i) {
      const Eigen::Vector3d x(et::uniform(g2, -2, 2), et::uniform(g2, -1, 1),
                              et::uniform(g2, 4, 8));
      const Eigen::Vector3d x_world = gt.inverse() * x;
      Eigen::Vector2d z;
      if (!try_project(cam, gt, x_world, &z)) continue;
      p.add_residual(2, {Problem::pose_ref(pose_id)},
                     [cam, x_world, z, pose_id](const Problem& prob, Eigen::VectorXd& r,
                                                std::vector<Eigen::MatrixXd>* jac) {
                       Eigen::Vector2d res;
                       Eigen::Matrix<double, 2, 6> jp;
                       if (!reprojection_residual(cam, prob.pose(pose_id), x_world, z, &res,
                                                  jac ? &jp : nullptr)) {
                         return false;
                       }
                       r = res;
                       if (jac) (*jac)[0] = jp;
                       return true;
                     });
    }
    NormalEquations ne = assemble_normal_equations(p, RobustLoss{1.0}, 1e-6);
    CHECK(ne.pose_dim() == 6);
    CHECK(ne.num_points() == 0);
    CHECK((solve_schur(ne) - solve_dense(ne)).norm() < 1e-10);
  }

  SUBCASE("diagonal-only system returns rhs over diagonal") {
    NormalEquations ne;
    ne.h_pp = Eigen::MatrixXd::Zero(6, 6);
    ne.h_pp.diagonal() << 2, 4, 5, 8, 10, 16;
    ne.h_pl = Eigen::MatrixXd::Zero(6, 3);
    ne.h_ll = {Eigen::Matrix3d(Eigen::Vector3d(3, 6, 12).asDiagonal())};
    ne.b_p = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
    ne.b_l = Eigen::Vector3d(3, 12, 24);
    for (const Eigen::VectorXd& delta : {solve_schur(ne), solve_dense(ne)}) {
      for (int i = 0; i < 6; ++i) {
        CHECK(delta[i] == doctest::Approx(ne.b_p[i] / ne.h_pp(i, i)).epsilon(1e-12));
      }
      CHECK(delta[6] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(delta[7] == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(delta[8] == doctest::Approx(2.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("iteration trace serializes to csv") {
  auto& gen = et::rng(205);
  ToyBA toy = make_toy_ba(gen, 2, 8, 0.02);
  const SolveReport report = lm_minimize(toy.problem, RobustLoss{1.0}, LMSettings{});
  const std::string csv = report.trace_csv();
  CHECK(csv.find("iter,cost,damping,step_norm,accepted") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(report.trace.size()) + 1);
}
