#include "lmbreak/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "lmbreak/error.hpp"

namespace lmb {

int nearest_grid_index(double coord) { return static_cast<int>(std::ceil(coord - 0.5)); }

HeatmapTargets render_heatmap_targets(const LandmarkSet& landmarks, ImageSize map_size, int stride, double sigma) {
  if (!(sigma > 0.0)) throw Error("heat-map sigma must be positive");
  if (stride <= 0 || map_size.height <= 0 || map_size.width <= 0) throw ShapeError("invalid heat-map geometry");
  const int k = static_cast<int>(landmarks.size());
  HeatmapTargets out{HeatmapSet(k, map_size.height, map_size.width, stride), std::vector<bool>(landmarks.size())};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < k; ++i) {
    double mx = landmarks[static_cast<std::size_t>(i)].x / stride;
    double my = landmarks[static_cast<std::size_t>(i)].y / stride;
    const double cx = std::clamp(mx, 0.0, static_cast<double>(map_size.width - 1));
    const double cy = std::clamp(my, 0.0, static_cast<double>(map_size.height - 1));
    out.clamped[static_cast<std::size_t>(i)] = cx != mx || cy != my;
    mx = cx;
    my = cy;
    const double gx = nearest_grid_index(mx);
    const double gy = nearest_grid_index(my);
    const double peak_dx2 = (gx - mx) * (gx - mx);
    const double peak_dy2 = (gy - my) * (gy - my);
    for (int y = 0; y < map_size.height; ++y) {
      const double ey = (y - my) * (y - my) - peak_dy2;
      for (int x = 0; x < map_size.width; ++x) {
        const double ex = (x - mx) * (x - mx) - peak_dx2;
        out.maps.at(i, y, x) = std::exp(-(ex + ey) * inv);
      }
    }
  }
  return out;
}

}  // namespace lmb
