#include "evptam/trajectory.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace evptam {

Trajectory read_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  Trajectory out;
  std::string line;
  std::size_t line_no = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw ParseError("malformed trajectory record", line_no);
    }
    const double qn = std::sqrt(qx * qx + qy * qy + qz * qz + qw * qw);
    if (!(qn > 0.0) || !std::isfinite(qn)) {
      throw ParseError("invalid quaternion in trajectory record", line_no);
    }
    if (!(t > last_t)) {
      throw ParseError("timestamps must be strictly increasing", line_no);
    }
    last_t = t;
    out.push_back(TrajectoryRecord{
        t, Pose(Eigen::Quaterniond(qw, qx, qy, qz), Eigen::Vector3d(tx, ty, tz))});
  }
  return out;
}

void write_tum(const Trajectory& trajectory, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory file: " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const auto& rec : trajectory) {
    const auto& t = rec.pose.translation();
    const auto& q = rec.pose.quaternion();
    std::snprintf(buf, sizeof(buf), "%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n",
                  rec.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
}

Alignment umeyama_align(const std::vector<Eigen::Vector3d>& source,
                        const std::vector<Eigen::Vector3d>& target, AlignMode mode) {
  const std::size_t n = source.size();
  if (n != target.size()) throw DimensionMismatch("point sets differ in size");
  if (n < 3) throw DegenerateConfiguration("alignment needs at least 3 pairs");

  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_t = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= double(n);
  mu_t /= double(n);

  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d ds = source[i] - mu_s;
    sigma += (target[i] - mu_t) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  sigma /= double(n);
  var_s /= double(n);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  // Collinear sets leave the cross-covariance rank deficient (two vanishing
  // singular values); the rotation is then not determined.
  if (d(1) <= 1e-12 * std::max(1.0, d(0))) {
    throw DegenerateConfiguration("degenerate (collinear) point configuration");
  }

  Eigen::Matrix3d s_fix = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s_fix(2, 2) = -1.0;
  }

  Alignment a;
  a.rotation = svd.matrixU() * s_fix * svd.matrixV().transpose();
  if (mode == AlignMode::Sim3) {
    if (!(var_s > 0.0)) throw DegenerateConfiguration("zero-variance source point set");
    a.scale = (d.asDiagonal() * s_fix).trace() / var_s;
  }
  a.translation = mu_t - a.scale * (a.rotation * mu_s);
  return a;
}

std::vector<AssociatedPair> associate(const Trajectory& estimate, const Trajectory& ground_truth,
                                      double max_dt) {
  std::vector<AssociatedPair> pairs;
  std::size_t gt_cursor = 0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double t = estimate[i].timestamp;
    while (gt_cursor + 1 < ground_truth.size() &&
           std::abs(ground_truth[gt_cursor + 1].timestamp - t) <=
               std::abs(ground_truth[gt_cursor].timestamp - t)) {
      ++gt_cursor;
    }
    if (gt_cursor < ground_truth.size() &&
        std::abs(ground_truth[gt_cursor].timestamp - t) <= max_dt) {
      pairs.push_back(AssociatedPair{i, gt_cursor});
    }
  }
  if (pairs.empty()) throw NoAssociations("no timestamp associations within the window");
  return pairs;
}

AteResult ate(const Trajectory& estimate, const Trajectory& ground_truth, AlignMode mode,
              double max_dt) {
  const auto pairs = associate(estimate, ground_truth, max_dt);
  std::vector<Eigen::Vector3d> est, gt;
  est.reserve(pairs.size());
  gt.reserve(pairs.size());
  for (const auto& p : pairs) {
    est.push_back(estimate[p.est_index].pose.translation());
    gt.push_back(ground_truth[p.gt_index].pose.translation());
  }

  AteResult res;
  res.n_pairs = pairs.size();
  res.alignment = umeyama_align(est, gt, mode);
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = (gt[i] - res.alignment.apply(est[i])).norm();
    sq += e * e;
    res.mean += e;
    res.max = std::max(res.max, e);
  }
  res.rmse = std::sqrt(sq / double(est.size()));
  res.mean /= double(est.size());
  return res;
}

RpeResult rpe(const Trajectory& estimate, const Trajectory& ground_truth, std::size_t delta,
              double max_dt) {
  if (delta == 0) throw ConfigError("rpe delta must be positive");
  const auto pairs = associate(estimate, ground_truth, max_dt);
  if (pairs.size() <= delta) throw NoAssociations("not enough associations for the rpe delta");

  std::vector<double> errors;
  errors.reserve(pairs.size() - delta);
  for (std::size_t i = 0; i + delta < pairs.size(); ++i) {
    const auto& a = pairs[i];
    const auto& b = pairs[i + delta];
    const Pose rel_est =
        estimate[a.est_index].pose.inverse() * estimate[b.est_index].pose;
    const Pose rel_gt =
        ground_truth[a.gt_index].pose.inverse() * ground_truth[b.gt_index].pose;
    errors.push_back((rel_gt.inverse() * rel_est).translation().norm());
  }

  RpeResult res;
  res.n_pairs = errors.size();
  double sq = 0.0;
  for (double e : errors) {
    sq += e * e;
    res.mean += e;
    res.max = std::max(res.max, e);
  }
  res.rmse = std::sqrt(sq / double(errors.size()));
  res.mean /= double(errors.size());
  double var = 0.0;
  for (double e : errors) var += (e - res.mean) * (e - res.mean);
  res.stddev = std::sqrt(var / double(errors.size()));
  return res;
}

double trajectory_length(const Trajectory& trajectory) {
  double len = 0.0;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    len += (trajectory[i].pose.translation() - trajectory[i - 1].pose.translation()).norm();
  }
  return len;
}

}  // namespace evptam
