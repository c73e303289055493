#include "evptam/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace evptam {

PlotSeries trajectory_series(const Trajectory& trajectory, const std::string& label,
                             std::array<unsigned char, 3> color) {
  PlotSeries s;
  s.label = label;
  s.color = color;
  s.points.reserve(trajectory.size());
  for (const auto& rec : trajectory) {
    s.points.emplace_back(rec.pose.translation().x(), rec.pose.translation().y());
  }
  return s;
}

void write_plot_ppm(const std::vector<PlotSeries>& series, int width, int height,
                    const std::string& path) {
  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (!any) {
        min_x = max_x = p.x();
        min_y = max_y = p.y();
        any = true;
      } else {
        min_x = std::min(min_x, p.x());
        max_x = std::max(max_x, p.x());
        min_y = std::min(min_y, p.y());
        max_y = std::max(max_y, p.y());
      }
    }
  }
  const double span_x = std::max(max_x - min_x, 1e-9);
  const double span_y = std::max(max_y - min_y, 1e-9);
  const int margin = 12;

  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height * 3, 255);
  auto put = [&](int x, int y, const std::array<unsigned char, 3>& c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t k = 3 * (static_cast<std::size_t>(y) * width + x);
    pixels[k] = c[0];
    pixels[k + 1] = c[1];
    pixels[k + 2] = c[2];
  };
  auto to_px = [&](const Eigen::Vector2d& p) {
    const double x = margin + (p.x() - min_x) / span_x * (width - 2 * margin);
    const double y = height - 1 - (margin + (p.y() - min_y) / span_y * (height - 2 * margin));
    return Eigen::Vector2d(x, y);
  };

  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      const Eigen::Vector2d a = to_px(s.points[i - 1]);
      const Eigen::Vector2d b = to_px(s.points[i]);
      const int steps = std::max(1, static_cast<int>((b - a).norm()) + 1);
      for (int k = 0; k <= steps; ++k) {
        const Eigen::Vector2d p = a + (b - a) * (static_cast<double>(k) / steps);
        put(static_cast<int>(std::lround(p.x())), static_cast<int>(std::lround(p.y())), s.color);
      }
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write plot: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

}  // namespace evptam
