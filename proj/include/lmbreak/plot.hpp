#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lmb {

struct PlotSeries {
  std::string name;
  std::vector<double> y;  // NaN leaves a gap
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_ticks;  // categorical x positions
  std::vector<PlotSeries> series;
};

/// Standalone SVG document.
std::string render_svg(const LinePlot& plot);
void write_svg(const LinePlot& plot, const std::filesystem::path& path);

}  // namespace lmb
