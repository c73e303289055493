#include "evptam/fusion.hpp"

#include <cmath>

namespace evptam {

E3CT warp_e3ct(const E3CT& tensor, const RigCalibration& rig, Side side, double depth,
               bool bilinear) {
  if (!(depth > 0.0)) throw ConfigError("warp depth must be positive");
  const PinholeCamera& dvs = rig.event_cam(side);
  const PinholeCamera& cam = rig.frame_cam(side);
  const Pose& T_cd = rig.T_cd(side);
  const Eigen::Vector2d& align = rig.align(side);

  E3CT out = E3CT::zero(cam.height, cam.width, tensor.timestamp);
  const int rows = tensor.height();
  const int cols = tensor.width();

  auto splat = [&](int tx, int ty, float w, const float v[3]) {
    if (tx < 0 || ty < 0 || tx >= cam.width || ty >= cam.height || w <= 0.f) return;
    out.channels[0](ty, tx) += w * v[0];
    out.channels[1](ty, tx) += w * v[1];
    out.channels[2](ty, tx) += w * v[2];
  };

  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const float v[3] = {tensor.channels[0](y, x), tensor.channels[1](y, x),
                          tensor.channels[2](y, x)};
      if (v[0] == 0.f && v[1] == 0.f && v[2] == 0.f) continue;

      const Eigen::Vector3d xd = dvs.unproject(Eigen::Vector2d(x, y), depth);
      const Eigen::Vector3d xc = T_cd * xd;
      if (!(xc.z() > 0.0)) continue;  // behind the frame camera
      const Eigen::Vector2d px(cam.fx * xc.x() / xc.z() + cam.cx + align.x(),
                               cam.fy * xc.y() / xc.z() + cam.cy + align.y());
      if (bilinear) {
        const int x0 = static_cast<int>(std::floor(px.x()));
        const int y0 = static_cast<int>(std::floor(px.y()));
        const float ax = static_cast<float>(px.x() - x0);
        const float ay = static_cast<float>(px.y() - y0);
        splat(x0, y0, (1.f - ax) * (1.f - ay), v);
        splat(x0 + 1, y0, ax * (1.f - ay), v);
        splat(x0, y0 + 1, (1.f - ax) * ay, v);
        splat(x0 + 1, y0 + 1, ax * ay, v);
      } else {
        splat(static_cast<int>(std::lround(px.x())), static_cast<int>(std::lround(px.y())), 1.f,
              v);
      }
    }
  }
  return out;
}

Grid collapse_to_intensity(const E3CT& tensor) {
  Grid g = (tensor.channels[0] + tensor.channels[1] + tensor.channels[2]) / 3.0f;
  return g.min(1.0f).max(0.0f);
}

AlignmentEstimate calibrate_alignment(const std::vector<Eigen::Vector2d>& frame_px,
                                      const std::vector<Eigen::Vector2d>& warped_px) {
  if (frame_px.size() != warped_px.size()) {
    throw DimensionMismatch("alignment match lists differ in length");
  }
  if (frame_px.size() < 10) {
    throw InsufficientMatches("alignment calibration needs at least 10 matches");
  }
  AlignmentEstimate est;
  est.num_matches = static_cast<int>(frame_px.size());
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < frame_px.size(); ++i) sum += frame_px[i] - warped_px[i];
  est.offset = sum / static_cast<double>(frame_px.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < frame_px.size(); ++i) {
    sq += (frame_px[i] - (warped_px[i] + est.offset)).squaredNorm();
  }
  est.rms_residual = std::sqrt(sq / static_cast<double>(frame_px.size()));
  return est;
}

std::pair<double, FusionMode> select_beta(double intensity_mean, double intensity_max,
                                          int frame_feature_count, const FusionConfig& cfg) {
  if (!(intensity_max > 0.0)) throw ConfigError("select_beta requires a positive intensity max");
  const double ratio = intensity_mean / intensity_max;
  const FusionMode mode = frame_feature_count < cfg.mode_feature_floor ? FusionMode::DvsBiased
                                                                       : FusionMode::ApsBiased;
  const double raw = mode == FusionMode::DvsBiased ? std::max(ratio, 1.0 - ratio)
                                                   : std::min(ratio, 1.0 - ratio);
  return {std::min(raw, cfg.beta_cap), mode};
}

Grid fuse(const Grid& frame, const Grid& events, double beta) {
  if (frame.rows() != events.rows() || frame.cols() != events.cols()) {
    throw DimensionMismatch("fusion inputs differ in size");
  }
  const float b = static_cast<float>(beta);
  return (1.0f - b) * frame + b * events;
}

}  // namespace evptam
