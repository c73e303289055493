#include "evptam/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace evptam {

double descriptor_distance(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return (a - b).norm();
}

namespace {

// Mean-removed, unit-normalized square patch around px; borders replicate.
// Returns an empty vector for (near-)flat patches.
Eigen::VectorXf patch_descriptor(const Grid& image, const Eigen::Vector2d& px, int radius) {
  const int rows = static_cast<int>(image.rows());
  const int cols = static_cast<int>(image.cols());
  const int side = 2 * radius + 1;
  Eigen::VectorXf d(side * side);
  const int x0 = static_cast<int>(std::lround(px.x()));
  const int y0 = static_cast<int>(std::lround(px.y()));
  int k = 0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int y = std::clamp(y0 + dy, 0, rows - 1);
      const int x = std::clamp(x0 + dx, 0, cols - 1);
      d[k++] = image(y, x);
    }
  }
  d.array() -= d.mean();
  const float n = d.norm();
  if (n < 1e-12f) return {};
  return d / n;
}

void sort_by_score(std::vector<Feature>& features) {
  std::stable_sort(features.begin(), features.end(), [](const Feature& a, const Feature& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.px.y() != b.px.y()) return a.px.y() < b.px.y();
    return a.px.x() < b.px.x();
  });
}

class BuiltinDetector final : public FeatureDetector {
 public:
  explicit BuiltinDetector(const BuiltinDetectorConfig& cfg) : cfg_(cfg) {}

  std::string name() const override { return "builtin"; }

  std::vector<Feature> detect(const Grid& image) const override {
    const int rows = static_cast<int>(image.rows());
    const int cols = static_cast<int>(image.cols());
    if (rows < 3 || cols < 3) return {};

    // Central-difference gradients.
    Grid ix = Grid::Zero(rows, cols), iy = Grid::Zero(rows, cols);
    for (int y = 1; y + 1 < rows; ++y) {
      for (int x = 1; x + 1 < cols; ++x) {
        ix(y, x) = 0.5f * (image(y, x + 1) - image(y, x - 1));
        iy(y, x) = 0.5f * (image(y + 1, x) - image(y - 1, x));
      }
    }

    // Min eigenvalue of the 3x3-summed structure tensor.
    Grid score = Grid::Zero(rows, cols);
    for (int y = 2; y + 2 < rows; ++y) {
      for (int x = 2; x + 2 < cols; ++x) {
        float gxx = 0.f, gyy = 0.f, gxy = 0.f;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const float a = ix(y + dy, x + dx);
            const float b = iy(y + dy, x + dx);
            gxx += a * a;
            gyy += b * b;
            gxy += a * b;
          }
        }
        const float tr = 0.5f * (gxx + gyy);
        const float det = gxx * gyy - gxy * gxy;
        const float disc = std::sqrt(std::max(0.f, tr * tr - det));
        score(y, x) = tr - disc;
      }
    }

    // Non-maximum suppression over nms_radius, then absolute floor.
    std::vector<Feature> features;
    const int r = cfg_.nms_radius;
    for (int y = 2; y + 2 < rows; ++y) {
      for (int x = 2; x + 2 < cols; ++x) {
        const float s = score(y, x);
        if (s < cfg_.min_score) continue;
        bool is_max = true;
        for (int dy = -r; dy <= r && is_max; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= rows || xx >= cols) continue;
            const float other = score(yy, xx);
            // strict on earlier pixels keeps exactly one peak per plateau
            if (other > s || (other == s && (dy < 0 || (dy == 0 && dx < 0)))) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        Feature f;
        f.px = Eigen::Vector2d(x, y);
        f.score = s;
        f.descriptor = patch_descriptor(image, f.px, cfg_.patch_radius);
        if (f.descriptor.size() == 0) continue;
        features.push_back(std::move(f));
      }
    }
    sort_by_score(features);
    if (static_cast<int>(features.size()) > cfg_.max_features) {
      features.resize(cfg_.max_features);
    }
    return features;
  }

 private:
  BuiltinDetectorConfig cfg_;
};

// Filter-bank model: one score filter and D descriptor filters, all k x k,
// correlated with the local patch. See README for the file layout.
class LearnedDetector final : public FeatureDetector {
 public:
  LearnedDetector(const std::string& path, int max_features) : max_features_(max_features) {
    std::ifstream in(path);
    if (!in) throw DetectorFailure("cannot open detector model: " + path);
    nlohmann::json model;
    try {
      in >> model;
    } catch (const std::exception& e) {
      throw DetectorFailure("invalid detector model " + path + ": " + e.what());
    }
    if (model.value("type", "") != "patch-filter-bank") {
      throw DetectorFailure("unsupported detector model type in " + path);
    }
    try {
      kernel_ = model.at("kernel").get<int>();
      const auto score = model.at("score_filter").get<std::vector<float>>();
      const auto filters = model.at("descriptor_filters").get<std::vector<std::vector<float>>>();
      if (kernel_ <= 0 || kernel_ % 2 == 0 ||
          score.size() != static_cast<std::size_t>(kernel_ * kernel_)) {
        throw DetectorFailure("inconsistent filter sizes in " + path);
      }
      score_filter_ = Eigen::Map<const Eigen::VectorXf>(score.data(), score.size());
      for (const auto& f : filters) {
        if (f.size() != static_cast<std::size_t>(kernel_ * kernel_)) {
          throw DetectorFailure("inconsistent filter sizes in " + path);
        }
        descriptor_filters_.emplace_back(Eigen::Map<const Eigen::VectorXf>(f.data(), f.size()));
      }
      if (descriptor_filters_.empty()) {
        throw DetectorFailure("model has no descriptor filters: " + path);
      }
      threshold_ = model.value("score_threshold", 1e-4f);
      nms_radius_ = model.value("nms_radius", 5);
    } catch (const nlohmann::json::exception& e) {
      throw DetectorFailure("invalid detector model " + path + ": " + e.what());
    }
  }

  std::string name() const override { return "learned"; }

  std::vector<Feature> detect(const Grid& image) const override {
    const int rows = static_cast<int>(image.rows());
    const int cols = static_cast<int>(image.cols());
    const int r = kernel_ / 2;
    if (rows < kernel_ || cols < kernel_) return {};

    Grid score = Grid::Zero(rows, cols);
    for (int y = r; y + r < rows; ++y) {
      for (int x = r; x + r < cols; ++x) {
        float s = 0.f;
        int k = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            s += score_filter_[k++] * image(y + dy, x + dx);
          }
        }
        score(y, x) = s * s;
      }
    }

    std::vector<Feature> features;
    for (int y = r; y + r < rows; ++y) {
      for (int x = r; x + r < cols; ++x) {
        const float s = score(y, x);
        if (s < threshold_) continue;
        bool is_max = true;
        for (int dy = -nms_radius_; dy <= nms_radius_ && is_max; ++dy) {
          for (int dx = -nms_radius_; dx <= nms_radius_; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= rows || xx >= cols) continue;
            const float other = score(yy, xx);
            if (other > s || (other == s && (dy < 0 || (dy == 0 && dx < 0)))) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        Eigen::VectorXf d(descriptor_filters_.size());
        for (std::size_t f = 0; f < descriptor_filters_.size(); ++f) {
          float v = 0.f;
          int k = 0;
          for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
              v += descriptor_filters_[f][k++] * image(y + dy, x + dx);
            }
          }
          d[f] = v;
        }
        const float n = d.norm();
        if (n < 1e-12f) continue;
        features.push_back(Feature{Eigen::Vector2d(x, y), d / n, s});
      }
    }
    sort_by_score(features);
    if (static_cast<int>(features.size()) > max_features_) features.resize(max_features_);
    return features;
  }

 private:
  int max_features_;
  int kernel_ = 0;
  int nms_radius_ = 5;
  float threshold_ = 1e-4f;
  Eigen::VectorXf score_filter_;
  std::vector<Eigen::VectorXf> descriptor_filters_;
};

}  // namespace

std::unique_ptr<FeatureDetector> make_builtin_detector(const BuiltinDetectorConfig& cfg) {
  return std::make_unique<BuiltinDetector>(cfg);
}

std::unique_ptr<FeatureDetector> make_learned_detector(const std::string& model_path,
                                                       int max_features) {
  return std::make_unique<LearnedDetector>(model_path, max_features);
}

std::unique_ptr<FeatureDetector> make_detector(const std::string& backend,
                                               const std::string& model_path,
                                               const BuiltinDetectorConfig& cfg) {
  if (backend == "builtin") return make_builtin_detector(cfg);
  if (backend == "learned") return make_learned_detector(model_path, cfg.max_features);
  throw ConfigError("unknown detector backend: " + backend);
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

namespace {

// Cell buckets over feature positions for windowed candidate lookup.
class FeatureGrid {
 public:
  FeatureGrid(const std::vector<Feature>& features, double cell_size) : cell_(cell_size) {
    for (std::size_t i = 0; i < features.size(); ++i) {
      cells_[key(features[i].px)].push_back(static_cast<int>(i));
    }
  }

  // Indices of features within Chebyshev distance `radius` of px.
  template <typename Fn>
  void for_candidates(const Eigen::Vector2d& px, double radius, Fn&& fn) const {
    const int span = static_cast<int>(std::ceil(radius / cell_)) + 1;
    const auto [cx, cy] = cell_coords(px);
    for (int dy = -span; dy <= span; ++dy) {
      for (int dx = -span; dx <= span; ++dx) {
        const auto it = cells_.find(pack(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (int idx : it->second) fn(idx);
      }
    }
  }

 private:
  std::pair<int, int> cell_coords(const Eigen::Vector2d& px) const {
    return {static_cast<int>(std::floor(px.x() / cell_)),
            static_cast<int>(std::floor(px.y() / cell_))};
  }
  static std::int64_t pack(int x, int y) {
    return (static_cast<std::int64_t>(x) << 32) ^ (static_cast<std::uint32_t>(y));
  }
  std::int64_t key(const Eigen::Vector2d& px) const {
    const auto [cx, cy] = cell_coords(px);
    return pack(cx, cy);
  }

  double cell_;
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

bool within_chebyshev(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double radius) {
  return std::abs(a.x() - b.x()) <= radius && std::abs(a.y() - b.y()) <= radius;
}

}  // namespace

std::vector<Match> match_stereo(const std::vector<Feature>& left,
                                const std::vector<Feature>& right,
                                const MatchingParams& params) {
  const double radius = params.neighborhood * params.cell_size;
  const FeatureGrid right_grid(right, params.cell_size);
  const FeatureGrid left_grid(left, params.cell_size);

  auto best_in = [&](const Feature& query, const std::vector<Feature>& candidates,
                     const FeatureGrid& grid) {
    int best = -1;
    double best_dist = 0.0;
    grid.for_candidates(query.px, radius, [&](int idx) {
      const Feature& c = candidates[idx];
      if (!within_chebyshev(query.px, c.px, radius)) return;
      const double dist = descriptor_distance(query.descriptor, c.descriptor);
      if (dist > params.max_distance) return;
      if (best < 0 || dist < best_dist || (dist == best_dist && idx < best)) {
        best_dist = dist;
        best = idx;
      }
    });
    return std::pair<int, double>(best, best_dist);
  };

  std::vector<Match> matches;
  for (std::size_t li = 0; li < left.size(); ++li) {
    const auto [ri, dist] = best_in(left[li], right, right_grid);
    if (ri < 0) continue;
    const auto [back, back_dist] = best_in(right[ri], left, left_grid);
    if (back == static_cast<int>(li)) {
      matches.push_back(Match{static_cast<int>(li), ri, dist});
    }
  }
  return matches;
}

std::vector<Match> match_temporal(const std::vector<ProjectedPoint>& projected,
                                  const std::vector<Eigen::VectorXf>& point_descriptors,
                                  const std::vector<Feature>& current,
                                  const MatchingParams& params) {
  const double radius = params.neighborhood * params.cell_size;
  const FeatureGrid grid(current, params.cell_size);

  std::vector<Match> matches;
  std::vector<char> feature_taken(current.size(), 0);
  for (std::size_t pi = 0; pi < projected.size(); ++pi) {
    const ProjectedPoint& p = projected[pi];
    if (p.depth < params.frustum_near || p.depth > params.frustum_far) continue;
    const Eigen::Vector2d motion = p.predicted_px - p.previous_px;
    const bool directed = motion.norm() > 1e-9;

    int best = -1;
    double best_dist = 0.0;
    grid.for_candidates(p.predicted_px, radius, [&](int idx) {
      if (feature_taken[idx]) return;
      const Feature& f = current[idx];
      if ((f.px - p.predicted_px).norm() > radius) return;
      // semi-circular gate: candidates must not lie behind the previous
      // position relative to the predicted motion direction
      if (directed && (f.px - p.previous_px).dot(motion) < 0.0) return;
      const double dist = descriptor_distance(point_descriptors[pi], f.descriptor);
      if (dist > params.max_distance) return;
      if (best < 0 || dist < best_dist || (dist == best_dist && idx < best)) {
        best_dist = dist;
        best = idx;
      }
    });
    if (best >= 0) {
      feature_taken[best] = 1;
      matches.push_back(Match{static_cast<int>(pi), best, best_dist});
    }
  }
  return matches;
}

}  // namespace evptam
