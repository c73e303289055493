#include "evptam/loopclosure.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace evptam {

Eigen::VectorXf compute_embedding(const std::vector<Feature>& features) {
  if (features.empty()) throw NoFeatures("keyframe embedding needs at least one feature");
  Eigen::VectorXf mean = Eigen::VectorXf::Zero(features.front().descriptor.size());
  for (const Feature& f : features) mean += f.descriptor;
  mean /= static_cast<float>(features.size());
  const float n = mean.norm();
  return n > 1e-12f ? Eigen::VectorXf(mean / n) : mean;
}

std::vector<LoopCandidate> detect_loop(int query_kf, const Eigen::VectorXf& query_embedding,
                                       const std::vector<std::pair<int, Eigen::VectorXf>>& database,
                                       int min_gap, double max_distance) {
  std::vector<LoopCandidate> candidates;
  for (const auto& [kf_id, embedding] : database) {
    if (kf_id == query_kf || query_kf - kf_id < min_gap) continue;
    if (embedding.size() != query_embedding.size()) continue;
    const double dist = (embedding - query_embedding).norm();
    if (dist > max_distance) continue;
    LoopCandidate c;
    c.query_kf = query_kf;
    c.match_kf = kf_id;
    c.embedding_distance = dist;
    candidates.push_back(c);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const LoopCandidate& a, const LoopCandidate& b) {
                     if (a.embedding_distance != b.embedding_distance) {
                       return a.embedding_distance < b.embedding_distance;
                     }
                     return a.match_kf < b.match_kf;
                   });
  return candidates;
}

// ---------------------------------------------------------------------------
// Geometric verification
// ---------------------------------------------------------------------------

namespace {

struct Correspondence {
  Eigen::Vector3d point;  // world
  Eigen::Vector2d px;     // query keyframe pixel
};

// Mutual-best descriptor matching between the match keyframe's features with
// 3D points and the query keyframe's features.
std::vector<Correspondence> loop_correspondences(const SharedMap& map, const Keyframe& query,
                                                 const Keyframe& match, double max_distance) {
  std::vector<int> match_feats;
  for (std::size_t i = 0; i < match.features.size(); ++i) {
    if (match.feature_point[i] >= 0) match_feats.push_back(static_cast<int>(i));
  }

  std::vector<Correspondence> out;
  std::vector<char> query_taken(query.features.size(), 0);
  for (int mi : match_feats) {
    const auto& md = match.features[mi].descriptor;
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t qi = 0; qi < query.features.size(); ++qi) {
      if (query_taken[qi]) continue;
      const double d = descriptor_distance(md, query.features[qi].descriptor);
      if (d > max_distance) continue;
      if (best < 0 || d < best_dist) {
        best = static_cast<int>(qi);
        best_dist = d;
      }
    }
    if (best < 0) continue;
    query_taken[best] = 1;
    out.push_back(Correspondence{map.point(match.feature_point[mi]).position,
                                 query.features[best].px});
  }
  return out;
}

// Linear 6-point resection: normalized-coordinate DLT followed by
// orthonormalization of the rotation part.
bool dlt_pose(const PinholeCamera& cam, const std::vector<Correspondence>& corr,
              const std::vector<int>& sample, Pose* pose) {
  const int n = static_cast<int>(sample.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (int k = 0; k < n; ++k) {
    const auto& c = corr[sample[k]];
    const double u = (c.px.x() - cam.cx) / cam.fx;
    const double v = (c.px.y() - cam.cy) / cam.fy;
    const Eigen::Vector4d xh(c.point.x(), c.point.y(), c.point.z(), 1.0);
    a.block<1, 4>(2 * k, 0) = -xh.transpose();
    a.block<1, 4>(2 * k, 8) = u * xh.transpose();
    a.block<1, 4>(2 * k + 1, 4) = -xh.transpose();
    a.block<1, 4>(2 * k + 1, 8) = v * xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  Eigen::Matrix<double, 3, 4> m;
  const Eigen::VectorXd p = svd.matrixV().col(11);
  m << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);

  // Resolve the projective sign so the sampled points sit in front.
  int positive = 0;
  for (int k = 0; k < n; ++k) {
    const auto& c = corr[sample[k]];
    if (m.row(2).head<3>().dot(c.point) + m(2, 3) > 0.0) ++positive;
  }
  if (2 * positive < n) m = -m;

  Eigen::JacobiSVD<Eigen::Matrix3d> rsvd(m.leftCols<3>(),
                                         Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double scale = rsvd.singularValues().mean();
  if (!(scale > 1e-12)) return false;
  Eigen::Matrix3d s_fix = Eigen::Matrix3d::Identity();
  if ((rsvd.matrixU() * rsvd.matrixV().transpose()).determinant() < 0.0) return false;
  const Eigen::Matrix3d r = rsvd.matrixU() * s_fix * rsvd.matrixV().transpose();
  const Eigen::Vector3d t = m.col(3) / scale;
  if (!r.allFinite() || !t.allFinite()) return false;
  *pose = Pose(r, t);
  return true;
}

int count_inliers(const PinholeCamera& cam, const std::vector<Correspondence>& corr,
                  const Pose& T_cw, double inlier_px, std::vector<char>* mask) {
  int count = 0;
  if (mask) mask->assign(corr.size(), 0);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    Eigen::Vector2d px;
    if (!try_project(cam, T_cw, corr[i].point, &px)) continue;
    if ((px - corr[i].px).norm() <= inlier_px) {
      ++count;
      if (mask) (*mask)[i] = 1;
    }
  }
  return count;
}

}  // namespace

LoopCandidate verify_loop(const SharedMap& map, LoopCandidate candidate,
                          const RigCalibration& rig, const LoopConfig& cfg) {
  const Keyframe query = map.keyframe(candidate.query_kf);
  const Keyframe match = map.keyframe(candidate.match_kf);
  const PinholeCamera& cam = rig.cam_left;

  const auto corr = loop_correspondences(map, query, match, cfg.match_max_distance);
  const int min_sample = 6;
  if (static_cast<int>(corr.size()) < std::max(min_sample, cfg.inlier_floor)) {
    return candidate;  // unverified
  }

  std::mt19937 rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(corr.size()) - 1);
  Pose best_pose;
  int best_inliers = 0;
  for (int it = 0; it < cfg.ransac_iterations; ++it) {
    std::set<int> sample_set;
    while (static_cast<int>(sample_set.size()) < min_sample) sample_set.insert(pick(rng));
    const std::vector<int> sample(sample_set.begin(), sample_set.end());
    Pose pose;
    if (!dlt_pose(cam, corr, sample, &pose)) continue;
    const int inliers = count_inliers(cam, corr, pose, cfg.inlier_px, nullptr);
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_pose = pose;
    }
  }
  if (best_inliers < cfg.inlier_floor) return candidate;

  // Refine on the inlier set.
  std::vector<char> mask;
  count_inliers(cam, corr, best_pose, cfg.inlier_px, &mask);
  Problem problem;
  const int pose_id = problem.add_pose(best_pose);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (!mask[i]) continue;
    const Eigen::Vector3d x = corr[i].point;
    const Eigen::Vector2d z = corr[i].px;
    problem.add_residual(2, {Problem::pose_ref(pose_id)},
                         [cam, x, z, pose_id](const Problem& p, Eigen::VectorXd& r,
                                              std::vector<Eigen::MatrixXd>* jac) {
                           Eigen::Vector2d res;
                           Eigen::Matrix<double, 2, 6> jp;
                           if (!reprojection_residual(cam, p.pose(pose_id), x, z, &res,
                                                      jac ? &jp : nullptr)) {
                             return false;
                           }
                           r = res;
                           if (jac) (*jac)[0] = jp;
                           return true;
                         });
  }
  LMSettings refine_settings;
  refine_settings.max_iterations = 10;
  try {
    lm_minimize(problem, RobustLoss{cfg.inlier_px}, refine_settings);
  } catch (const Error&) {
    return candidate;
  }
  const Pose refined = problem.pose(pose_id);
  const int refined_inliers = count_inliers(cam, corr, refined, cfg.inlier_px, nullptr);
  if (refined_inliers < cfg.inlier_floor) return candidate;

  candidate.verified = true;
  candidate.inliers = refined_inliers;
  // refined is the query camera's world-to-camera estimate consistent with
  // the match keyframe's map: relative = T_wc_match^-1 * T_wc_query.
  candidate.relative_pose = match.T_cw * refined.inverse();
  return candidate;
}

// ---------------------------------------------------------------------------
// Pose graph
// ---------------------------------------------------------------------------

PoseGraph build_pose_graph(const SharedMap& map, const std::vector<PoseGraphEdge>& loop_edges) {
  PoseGraph graph;
  graph.node_ids = map.keyframe_ids();
  graph.nodes.reserve(graph.node_ids.size());
  for (int id : graph.node_ids) graph.nodes.push_back(map.keyframe(id).T_cw.inverse());
  for (std::size_t n = 1; n < graph.nodes.size(); ++n) {
    PoseGraphEdge e;
    e.i = static_cast<int>(n - 1);
    e.j = static_cast<int>(n);
    e.measurement = graph.nodes[n - 1].inverse() * graph.nodes[n];
    e.weight = 1.0;
    e.kind = EdgeKind::Odometry;
    graph.edges.push_back(e);
  }
  for (const auto& e : loop_edges) graph.edges.push_back(e);
  return graph;
}

std::vector<Pose> optimize_pose_graph(const PoseGraph& graph, const LMSettings& settings) {
  if (graph.nodes.empty()) return {};

  Problem problem;
  std::vector<int> blocks;
  blocks.reserve(graph.nodes.size());
  for (std::size_t n = 0; n < graph.nodes.size(); ++n) {
    blocks.push_back(problem.add_pose(graph.nodes[n], n == 0));  // gauge: node 0 fixed
  }

  for (const auto& edge : graph.edges) {
    const Pose meas_inv = edge.measurement.inverse();
    const int bi = blocks[edge.i];
    const int bj = blocks[edge.j];
    auto residual = [meas_inv](const Pose& ti, const Pose& tj) {
      return log6(meas_inv * (ti.inverse() * tj));
    };
    problem.add_residual(
        6, {Problem::pose_ref(bi), Problem::pose_ref(bj)},
        [residual, bi, bj](const Problem& p, Eigen::VectorXd& r,
                           std::vector<Eigen::MatrixXd>* jac) {
          const Pose ti = p.pose(bi);
          const Pose tj = p.pose(bj);
          r = residual(ti, tj);
          if (jac) {
            // central differences on the local charts
            const double h = 1e-7;
            Eigen::MatrixXd ji(6, 6), jj(6, 6);
            for (int d = 0; d < 6; ++d) {
              Eigen::Matrix<double, 6, 1> delta = Eigen::Matrix<double, 6, 1>::Zero();
              delta[d] = h;
              ji.col(d) = (residual(oplus(ti, delta), tj) -
                           residual(oplus(ti, Eigen::Matrix<double, 6, 1>(-delta)), tj)) /
                          (2.0 * h);
              jj.col(d) = (residual(ti, oplus(tj, delta)) -
                           residual(ti, oplus(tj, Eigen::Matrix<double, 6, 1>(-delta)))) /
                          (2.0 * h);
            }
            (*jac)[0] = ji;
            (*jac)[1] = jj;
          }
          return r.allFinite();
        },
        edge.weight);
  }

  lm_minimize(problem, RobustLoss{1e9}, settings);  // quadratic: no outliers among edges

  std::vector<Pose> corrected;
  corrected.reserve(graph.nodes.size());
  for (int b : blocks) corrected.push_back(problem.pose(b));
  return corrected;
}

void apply_pose_graph_correction(SharedMap& map, const PoseGraph& graph,
                                 const std::vector<Pose>& corrected) {
  if (corrected.size() != graph.nodes.size()) {
    throw DimensionMismatch("corrected pose count differs from graph nodes");
  }
  std::map<int, int> node_of_kf;
  for (std::size_t n = 0; n < graph.node_ids.size(); ++n) {
    node_of_kf[graph.node_ids[n]] = static_cast<int>(n);
  }

  std::map<int, Pose> new_poses;
  for (std::size_t n = 0; n < graph.node_ids.size(); ++n) {
    new_poses[graph.node_ids[n]] = corrected[n].inverse();  // back to T_cw
  }

  // Each point rides rigidly with the keyframe of its first observation.
  std::map<int, Eigen::Vector3d> new_points;
  for (const MapPoint& pt : map.all_points()) {
    if (pt.observations.empty()) continue;
    const auto it = node_of_kf.find(pt.observations.front().keyframe_id);
    if (it == node_of_kf.end()) continue;
    const int n = it->second;
    const Pose transform = corrected[n] * graph.nodes[n].inverse();  // wc_new * wc_old^-1
    new_points[pt.id] = transform * pt.position;
  }
  map.commit(new_poses, new_points);
}

}  // namespace evptam
