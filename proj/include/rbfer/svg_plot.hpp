#pragma once

#include <string>
#include <vector>

namespace rbfer {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal line chart as a standalone SVG file.
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series);

}  // namespace rbfer
