#ifndef EVPTAM_PLOT_HPP
#define EVPTAM_PLOT_HPP

#include <array>
#include <string>
#include <vector>

#include "evptam/trajectory.hpp"

namespace evptam {

// Minimal raster plotting: named polylines over the trajectories' x/y extent,
// written as a binary PPM (P6).
struct PlotSeries {
  std::string label;
  std::array<unsigned char, 3> color{0, 0, 0};
  std::vector<Eigen::Vector2d> points;
};

void write_plot_ppm(const std::vector<PlotSeries>& series, int width, int height,
                    const std::string& path);

// x/y projection of a trajectory as a plot series.
PlotSeries trajectory_series(const Trajectory& trajectory, const std::string& label,
                             std::array<unsigned char, 3> color);

}  // namespace evptam

#endif  // EVPTAM_PLOT_HPP
