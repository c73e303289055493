#include "evptam/solver.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <sstream>

namespace evptam {

std::pair<double, double> huber(double residual_sq, double delta) {
  const double delta_sq = delta * delta;
  if (residual_sq <= delta_sq) {
    return {residual_sq, 1.0};
  }
  const double rn = std::sqrt(residual_sq);
  return {2.0 * delta * rn - delta_sq, delta / rn};
}

std::string SolveReport::trace_csv() const {
  std::ostringstream out;
  out << "iter,cost,damping,step_norm,accepted\n";
  for (const auto& rec : trace) {
    out << rec.iteration << "," << rec.cost << "," << rec.damping << "," << rec.step_norm << ","
        << (rec.accepted ? 1 : 0) << "\n";
  }
  return out.str();
}

int Problem::add_pose(const Pose& value, bool fixed) {
  poses_.push_back({value, fixed});
  return static_cast<int>(poses_.size()) - 1;
}

int Problem::add_point(const Eigen::Vector3d& value, bool fixed) {
  points_.push_back({value, fixed});
  return static_cast<int>(points_.size()) - 1;
}

void Problem::add_residual(int dim, std::vector<BlockRef> blocks, Eval eval, double weight) {
  int point_refs = 0;
  for (const auto& b : blocks) point_refs += b.is_point ? 1 : 0;
  if (point_refs > 1) {
    throw ConfigError("a residual block may reference at most one point block");
  }
  residuals_.push_back({dim, std::move(blocks), std::move(eval), weight});
}

// ---------------------------------------------------------------------------
// Evaluation and system assembly
// ---------------------------------------------------------------------------

namespace {

struct Layout {
  // tangent offsets per free block; -1 for fixed blocks
  std::vector<int> pose_offset;
  std::vector<int> point_offset;  // offsets count within the point segment
  int pose_dim = 0;
  int num_free_points = 0;
  int total_dim() const { return pose_dim + 3 * num_free_points; }
};

Layout make_layout(const Problem& p) {
  Layout layout;
  layout.pose_offset.assign(p.num_poses(), -1);
  layout.point_offset.assign(p.num_points(), -1);
  for (int i = 0; i < p.num_poses(); ++i) {
    if (!p.pose_fixed(i)) {
      layout.pose_offset[i] = layout.pose_dim;
      layout.pose_dim += 6;
    }
  }
  for (int i = 0; i < p.num_points(); ++i) {
    if (!p.point_fixed(i)) {
      layout.point_offset[i] = 3 * layout.num_free_points;
      ++layout.num_free_points;
    }
  }
  return layout;
}

}  // namespace

class LMDriver {
 public:
  LMDriver(Problem& problem, const RobustLoss& loss, const LMSettings& settings)
      : p_(problem), loss_(loss), settings_(settings), layout_(make_layout(problem)) {}

  static double block_cost(const Problem& p, const RobustLoss& loss, bool* evaluable) {
    double cost = 0.0;
    if (evaluable) *evaluable = true;
    for (const auto& block : p.residuals_) {
      Eigen::VectorXd r(block.dim);
      if (!block.eval(p, r, nullptr) || !r.allFinite()) {
        if (evaluable) {
          *evaluable = false;
          return std::numeric_limits<double>::infinity();
        }
        throw NonFiniteResidual("residual block not evaluable at the current state");
      }
      cost += huber(block.weight * r.squaredNorm(), loss.delta).first;
    }
    return cost;
  }

  NormalEquations assemble() const {
    NormalEquations ne;
    const int pd = layout_.pose_dim;
    const int ld = 3 * layout_.num_free_points;
    ne.h_pp = Eigen::MatrixXd::Zero(pd, pd);
    ne.h_pl = Eigen::MatrixXd::Zero(pd, ld);
    ne.h_ll.assign(layout_.num_free_points, Eigen::Matrix3d::Zero());
    ne.b_p = Eigen::VectorXd::Zero(pd);
    ne.b_l = Eigen::VectorXd::Zero(ld);

    for (const auto& block : p_.residuals_) {
      Eigen::VectorXd r(block.dim);
      std::vector<Eigen::MatrixXd> jac(block.blocks.size());
      if (!block.eval(p_, r, &jac) || !r.allFinite()) {
        throw NonFiniteResidual("residual block not evaluable while assembling normal equations");
      }
      const double sw = std::sqrt(block.weight);
      r *= sw;
      const double irls = huber(r.squaredNorm(), loss_.delta).second;
      const double scale = sw * std::sqrt(irls);
      r *= std::sqrt(irls);

      struct Ref {
        int offset;      // global column offset (points offset after poses)
        bool is_point;
        const Eigen::MatrixXd* j;
      };
      std::vector<Ref> refs;
      for (std::size_t k = 0; k < block.blocks.size(); ++k) {
        const auto& b = block.blocks[k];
        const int off = b.is_point ? layout_.point_offset[b.index] : layout_.pose_offset[b.index];
        if (off < 0) continue;  // fixed block
        jac[k] *= scale;
        refs.push_back({off, b.is_point, &jac[k]});
      }
      for (const auto& a : refs) {
        const Eigen::MatrixXd& ja = *a.j;
        const Eigen::VectorXd g = ja.transpose() * r;
        if (a.is_point) {
          ne.b_l.segment<3>(a.offset) -= g;
        } else {
          ne.b_p.segment(a.offset, 6) -= g;
        }
        for (const auto& b : refs) {
          const Eigen::MatrixXd& jb = *b.j;
          const Eigen::MatrixXd h = ja.transpose() * jb;
          if (!a.is_point && !b.is_point) {
            ne.h_pp.block(a.offset, b.offset, 6, 6) += h;
          } else if (!a.is_point && b.is_point) {
            ne.h_pl.block(a.offset, b.offset, 6, 3) += h;
          } else if (a.is_point && b.is_point) {
            ne.h_ll[a.offset / 3] += h;
          }
          // point-pose fills via the symmetric pose-point case
        }
      }
    }
    return ne;
  }

  void apply_step(const Eigen::VectorXd& delta) {
    for (int i = 0; i < p_.num_poses(); ++i) {
      const int off = layout_.pose_offset[i];
      if (off >= 0) {
        p_.set_pose(i, oplus(p_.pose(i), Eigen::Matrix<double, 6, 1>(delta.segment(off, 6))));
      }
    }
    for (int i = 0; i < p_.num_points(); ++i) {
      const int off = layout_.point_offset[i];
      if (off >= 0) {
        p_.set_point(i, p_.point(i) + delta.segment(layout_.pose_dim + off, 3));
      }
    }
  }

  SolveReport run() {
    SolveReport report;
    report.initial_cost = block_cost(p_, loss_, nullptr);
    double cost = report.initial_cost;
    double damping = settings_.initial_damping;
    bool need_assemble = true;
    NormalEquations ne;

    std::vector<Pose> pose_backup(p_.num_poses());
    std::vector<Eigen::Vector3d> point_backup(p_.num_points());
    auto save = [&]() {
      for (int i = 0; i < p_.num_poses(); ++i) pose_backup[i] = p_.pose(i);
      for (int i = 0; i < p_.num_points(); ++i) point_backup[i] = p_.point(i);
    };
    auto restore = [&]() {
      for (int i = 0; i < p_.num_poses(); ++i) p_.set_pose(i, pose_backup[i]);
      for (int i = 0; i < p_.num_points(); ++i) p_.set_point(i, point_backup[i]);
    };

    for (int iter = 1; iter <= settings_.max_iterations; ++iter) {
      if (need_assemble) {
        ne = assemble();
        need_assemble = false;
      }
      NormalEquations damped = ne;
      damped.h_pp.diagonal().array() += damping;
      for (auto& h : damped.h_ll) h.diagonal().array() += damping;

      Eigen::VectorXd delta;
      bool solved = true;
      try {
        delta = layout_.num_free_points > 0 ? solve_schur(damped) : solve_dense(damped);
      } catch (const SingularNormalEquations&) {
        solved = false;
      }
      if (!solved) {
        if (damping > 1e12) throw SingularNormalEquations("normal equations unsolvable");
        report.trace.push_back({iter, cost, damping, 0.0, false});
        damping *= settings_.damping_up;
        continue;
      }

      const double step_norm = delta.norm();
      if (step_norm < settings_.step_tolerance) {
        report.trace.push_back({iter, cost, damping, step_norm, false});
        report.status = SolveStatus::Converged;
        report.final_cost = cost;
        return report;
      }

      save();
      apply_step(delta);
      bool evaluable = true;
      const double candidate_cost = block_cost(p_, loss_, &evaluable);
      if (evaluable && candidate_cost < cost) {
        report.trace.push_back({iter, candidate_cost, damping, step_norm, true});
        ++report.accepted_steps;
        damping *= settings_.damping_down;
        need_assemble = true;
        const double decrease = (cost - candidate_cost) / std::max(cost, 1e-300);
        cost = candidate_cost;
        if (decrease < settings_.cost_tolerance) {
          report.status = SolveStatus::Converged;
          report.final_cost = cost;
          return report;
        }
      } else {
        restore();
        report.trace.push_back({iter, cost, damping, step_norm, false});
        damping *= settings_.damping_up;
      }
    }
    report.status = SolveStatus::MaxIterations;
    report.final_cost = cost;
    return report;
  }

 private:
  Problem& p_;
  const RobustLoss& loss_;
  const LMSettings& settings_;
  Layout layout_;
};

double robust_cost(const Problem& problem, const RobustLoss& loss) {
  return LMDriver::block_cost(problem, loss, nullptr);
}

NormalEquations assemble_normal_equations(Problem& problem, const RobustLoss& loss,
                                          double damping) {
  LMSettings settings;
  LMDriver driver(problem, loss, settings);
  NormalEquations ne = driver.assemble();
  ne.h_pp.diagonal().array() += damping;
  for (auto& h : ne.h_ll) h.diagonal().array() += damping;
  return ne;
}

SolveReport lm_minimize(Problem& problem, const RobustLoss& loss, const LMSettings& settings) {
  return LMDriver(problem, loss, settings).run();
}

// ---------------------------------------------------------------------------
// Linear solvers
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd dense_system(const NormalEquations& ne) {
  const int pd = ne.pose_dim();
  const int ld = 3 * ne.num_points();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(pd + ld, pd + ld);
  h.topLeftCorner(pd, pd) = ne.h_pp;
  h.topRightCorner(pd, ld) = ne.h_pl;
  h.bottomLeftCorner(ld, pd) = ne.h_pl.transpose();
  for (int i = 0; i < ne.num_points(); ++i) {
    h.block<3, 3>(pd + 3 * i, pd + 3 * i) = ne.h_ll[i];
  }
  return h;
}

void check_finite(const Eigen::VectorXd& x, const char* what) {
  if (!x.allFinite()) throw SingularNormalEquations(what);
}

}  // namespace

Eigen::VectorXd solve_dense(const NormalEquations& ne) {
  const Eigen::MatrixXd h = dense_system(ne);
  Eigen::VectorXd b(ne.pose_dim() + 3 * ne.num_points());
  b << ne.b_p, ne.b_l;
  if (h.rows() == 0) return Eigen::VectorXd();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success) throw SingularNormalEquations("dense factorization failed");
  const Eigen::VectorXd x = ldlt.solve(b);
  check_finite(x, "dense solve produced non-finite update");
  if ((h * x - b).norm() > 1e-6 * std::max(1.0, b.norm())) {
    throw SingularNormalEquations("dense solve residual too large");
  }
  return x;
}

Eigen::VectorXd solve_schur(const NormalEquations& ne) {
  const int pd = ne.pose_dim();
  const int num_pts = ne.num_points();
  if (num_pts == 0) return solve_dense(ne);

  // Invert the block-diagonal point part.
  std::vector<Eigen::Matrix3d> h_ll_inv(num_pts);
  for (int i = 0; i < num_pts; ++i) {
    const Eigen::Matrix3d& h = ne.h_ll[i];
    const double det = h.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-300) {
      throw SingularNormalEquations("singular point block in Schur elimination");
    }
    h_ll_inv[i] = h.inverse();
  }

  // S = Hpp - Hpl Hll^-1 Hlp, reduced rhs = bp - Hpl Hll^-1 bl.
  Eigen::MatrixXd s = ne.h_pp;
  Eigen::VectorXd rhs = ne.b_p;
  Eigen::MatrixXd h_pl_ll_inv(pd, 3 * num_pts);
  for (int i = 0; i < num_pts; ++i) {
    h_pl_ll_inv.middleCols<3>(3 * i) = ne.h_pl.middleCols<3>(3 * i) * h_ll_inv[i];
  }
  s.noalias() -= h_pl_ll_inv * ne.h_pl.transpose();
  rhs.noalias() -= h_pl_ll_inv * ne.b_l;

  Eigen::VectorXd dp;
  if (pd > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
    if (ldlt.info() != Eigen::Success) {
      throw SingularNormalEquations("Schur complement factorization failed");
    }
    dp = ldlt.solve(rhs);
    check_finite(dp, "Schur solve produced non-finite pose update");
    if ((s * dp - rhs).norm() > 1e-6 * std::max(1.0, rhs.norm())) {
      throw SingularNormalEquations("Schur solve residual too large");
    }
  } else {
    dp = Eigen::VectorXd();
  }

  // Back-substitution per point.
  Eigen::VectorXd delta(pd + 3 * num_pts);
  delta.head(pd) = dp;
  for (int i = 0; i < num_pts; ++i) {
    Eigen::Vector3d bl = ne.b_l.segment<3>(3 * i);
    if (pd > 0) bl.noalias() -= ne.h_pl.middleCols<3>(3 * i).transpose() * dp;
    delta.segment<3>(pd + 3 * i) = h_ll_inv[i] * bl;
  }
  check_finite(delta, "Schur back-substitution produced non-finite update");
  return delta;
}

// ---------------------------------------------------------------------------
// Jacobian verification
// ---------------------------------------------------------------------------

double check_jacobian(const Problem& problem, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  double max_rel_err = 0.0;
  for (const auto& block : problem.residuals_) {
    Eigen::VectorXd r(block.dim);
    std::vector<Eigen::MatrixXd> jac(block.blocks.size());
    if (!block.eval(problem, r, &jac)) {
      throw NonFiniteResidual("residual block not evaluable in check_jacobian");
    }
    for (std::size_t k = 0; k < block.blocks.size(); ++k) {
      const auto& ref = block.blocks[k];
      const bool fixed = ref.is_point ? problem.point_fixed(ref.index)
                                      : problem.pose_fixed(ref.index);
      if (fixed) continue;
      const int tdim = ref.is_point ? 3 : 6;
      for (int d = 0; d < tdim; ++d) {
        auto perturbed = [&](double step) {
          Problem copy = problem;
          if (ref.is_point) {
            Eigen::Vector3d x = copy.point(ref.index);
            x[d] += step;
            copy.set_point(ref.index, x);
          } else {
            Eigen::Matrix<double, 6, 1> delta = Eigen::Matrix<double, 6, 1>::Zero();
            delta[d] = step;
            copy.set_pose(ref.index, oplus(copy.pose(ref.index), delta));
          }
          Eigen::VectorXd rp(block.dim);
          if (!block.eval(copy, rp, nullptr)) {
            throw NonFiniteResidual("residual block not evaluable at perturbed state");
          }
          return rp;
        };
        const Eigen::VectorXd fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
        for (int row = 0; row < block.dim; ++row) {
          const double a = jac[k](row, d);
          const double b = fd[row];
          const double rel = std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
          max_rel_err = std::max(max_rel_err, rel);
        }
      }
    }
  }
  return max_rel_err;
}

}  // namespace evptam
