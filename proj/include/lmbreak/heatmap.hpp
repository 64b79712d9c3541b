#pragma once

#include <span>
#include <vector>

#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"

namespace lmb {

/// k maps of identical resolution (image resolution / stride).
struct HeatmapSet {
  int count = 0;
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> values;

  HeatmapSet() = default;
  HeatmapSet(int k, int h, int w, int stride_, double fill = 0.0)
      : count(k), height(h), width(w), stride(stride_), values(static_cast<std::size_t>(k) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::span<double> map(int i) { return std::span<double>(values).subspan(i * plane(), plane()); }
  std::span<const double> map(int i) const { return std::span<const double>(values).subspan(i * plane(), plane()); }
  double at(int i, int y, int x) const { return values[i * plane() + static_cast<std::size_t>(y) * width + x]; }
  double& at(int i, int y, int x) { return values[i * plane() + static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const HeatmapSet& o) const { return count == o.count && height == o.height && width == o.width; }
};

struct HeatmapTargets {
  HeatmapSet maps;
  /// One flag per landmark: true when its scaled position fell outside the map and was clamped.
  std::vector<bool> clamped;
};

/// Grid point nearest to a map coordinate; exact half-way ties go to the lower index.
int nearest_grid_index(double coord);

/// Gaussian targets centred on each landmark (image coords / stride), rescaled so
/// the value at the nearest grid point is exactly 1.0.
HeatmapTargets render_heatmap_targets(const LandmarkSet& landmarks, ImageSize map_size, int stride, double sigma);

}  // namespace lmb
