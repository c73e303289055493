#ifndef EVPTAM_SOLVER_HPP
#define EVPTAM_SOLVER_HPP

#include <Eigen/Core>
#include <functional>
#include <utility>
#include <vector>

#include "evptam/geometry.hpp"

// Robust Levenberg-Marquardt over pose (6-dof tangent) and point (3-dof)
// blocks, with a Schur-complement path exploiting the camera/point structure
// of bundle adjustment. A solver instance is single-threaded per problem.

namespace evptam {

struct RobustLoss {
  double delta = 1.0;  // Huber threshold in residual-norm units
};

// Huber loss on a squared residual norm: quadratic below delta^2, linear
// above. Returns (loss value, IRLS weight).
std::pair<double, double> huber(double residual_sq, double delta);

struct LMSettings {
  int max_iterations = 30;
  double initial_damping = 1e-4;
  double damping_up = 10.0;
  double damping_down = 0.5;
  double cost_tolerance = 1e-12;  // relative decrease of robust cost
  double step_tolerance = 1e-12;  // norm of the accepted update
};

enum class SolveStatus { Converged, MaxIterations };

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;      // robust cost after this step attempt
  double damping = 0.0;   // damping used for the attempt
  double step_norm = 0.0;
  bool accepted = false;
};

struct SolveReport {
  SolveStatus status = SolveStatus::MaxIterations;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int accepted_steps = 0;
  std::vector<IterationRecord> trace;

  // CSV dump of the iteration trace: iter,cost,damping,step_norm,accepted.
  std::string trace_csv() const;
};

// ---------------------------------------------------------------------------
// Problem definition. Parameter blocks are poses (left-composed 6-dof tangent
// chart, quaternion renormalized on every update) or Euclidean 3-points.
// Residual blocks reference any number of pose blocks and at most one point
// block, and evaluate residuals plus analytic Jacobians in the blocks'
// tangent coordinates. Evaluation returning false marks the state
// non-evaluable; the step attempt is rejected.
// ---------------------------------------------------------------------------

class Problem {
 public:
  struct BlockRef {
    bool is_point = false;
    int index = 0;  // into poses() or points()
  };

  // jac, when non-null, has one dim x tangent_dim matrix per referenced block.
  using Eval = std::function<bool(const Problem&, Eigen::VectorXd& residual,
                                  std::vector<Eigen::MatrixXd>* jac)>;

  int add_pose(const Pose& value, bool fixed = false);
  int add_point(const Eigen::Vector3d& value, bool fixed = false);

  void add_residual(int dim, std::vector<BlockRef> blocks, Eval eval, double weight = 1.0);

  const Pose& pose(int id) const { return poses_[id].value; }
  const Eigen::Vector3d& point(int id) const { return points_[id].value; }
  void set_pose(int id, const Pose& p) { poses_[id].value = p; }
  void set_point(int id, const Eigen::Vector3d& x) { points_[id].value = x; }
  bool pose_fixed(int id) const { return poses_[id].fixed; }
  bool point_fixed(int id) const { return points_[id].fixed; }
  int num_poses() const { return static_cast<int>(poses_.size()); }
  int num_points() const { return static_cast<int>(points_.size()); }
  int num_residual_blocks() const { return static_cast<int>(residuals_.size()); }

  static BlockRef pose_ref(int index) { return BlockRef{false, index}; }
  static BlockRef point_ref(int index) { return BlockRef{true, index}; }

 private:
  struct PoseBlock {
    Pose value;
    bool fixed = false;
  };
  struct PointBlock {
    Eigen::Vector3d value;
    bool fixed = false;
  };
  struct ResidualBlock {
    int dim = 0;
    std::vector<BlockRef> blocks;
    Eval eval;
    double weight = 1.0;  // measurement weight, applied as sqrt(w) scaling
  };

  std::vector<PoseBlock> poses_;
  std::vector<PointBlock> points_;
  std::vector<ResidualBlock> residuals_;

  friend class LMDriver;
  friend double robust_cost(const Problem&, const RobustLoss&);
  friend double check_jacobian(const Problem&, double);
};

// Robust total cost at the problem's current values. Throws NonFiniteResidual
// if any residual block cannot be evaluated or is non-finite.
double robust_cost(const Problem& problem, const RobustLoss& loss);

// Minimizes the robust cost in place; the problem holds the solution on
// return. Cost never increases across accepted steps.
SolveReport lm_minimize(Problem& problem, const RobustLoss& loss, const LMSettings& settings);

// Max elementwise relative error between analytic Jacobians and central
// finite differences with step h, over all residual blocks and free blocks.
double check_jacobian(const Problem& problem, double h);

// ---------------------------------------------------------------------------
// Damped normal equations with the two-block BA structure: a dense pose part
// and an independent 3x3 block per point. Public so the Schur and dense
// solve paths can be exercised against each other directly.
// ---------------------------------------------------------------------------

struct NormalEquations {
  Eigen::MatrixXd h_pp;                // P x P, P = total free pose tangent dims
  Eigen::MatrixXd h_pl;                // P x 3L
  std::vector<Eigen::Matrix3d> h_ll;   // L diagonal 3x3 blocks
  Eigen::VectorXd b_p;                 // P
  Eigen::VectorXd b_l;                 // 3L

  int pose_dim() const { return static_cast<int>(h_pp.rows()); }
  int num_points() const { return static_cast<int>(h_ll.size()); }
};

// Schur-complement solve: eliminate points, solve the reduced pose system,
// back-substitute. Returns the stacked update (poses, then points).
Eigen::VectorXd solve_schur(const NormalEquations& ne);

// Reference path: one dense factorization of the full system.
Eigen::VectorXd solve_dense(const NormalEquations& ne);

// The damped Gauss-Newton system lm_minimize solves at the problem's current
// values (free blocks only, IRLS-weighted).
NormalEquations assemble_normal_equations(Problem& problem, const RobustLoss& loss,
                                          double damping);

}  // namespace evptam

#endif  // EVPTAM_SOLVER_HPP
