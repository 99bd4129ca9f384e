#include "rbfer/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rbfer/errors.hpp"

namespace rbfer {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

}  // namespace

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series) {
  if (series.empty()) throw ConfigError("plot needs at least one series");

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty()) {
      throw ConfigError("plot series '" + s.label + "' is empty or ragged");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double width = 640, height = 420;
  const double left = 70, right = 20, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write plot '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"sans-serif\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << title << "</text>\n";

  // axes + ticks
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\""
      << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 5.0;
    const double fy = ymin + (ymax - ymin) * t / 5.0;
    out << "<line x1=\"" << sx(fx) << "\" y1=\"" << top + ph << "\" x2=\""
        << sx(fx) << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << sx(fx) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(fx) << "</text>\n";
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << left
        << "\" y2=\"" << sy(fy) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(fy) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << top + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      out << sx(series[s].x[i]) << ',' << sy(series[s].y[i]) << ' ';
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      out << "<circle cx=\"" << sx(series[s].x[i]) << "\" cy=\""
          << sy(series[s].y[i]) << "\" r=\"2.2\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 14 + 16 * static_cast<double>(s);
    out << "<line x1=\"" << left + pw - 130 << "\" y1=\"" << ly << "\" x2=\""
        << left + pw - 110 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw - 104 << "\" y=\"" << ly + 4
        << "\" font-size=\"11\">" << series[s].label << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw DataError("error writing plot '" + path + "'");
}

}  // namespace rbfer
