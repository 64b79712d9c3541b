#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lmb {

struct ImageSize {
  int height = 0;
  int width = 0;
  bool operator==(const ImageSize&) const = default;
};

/// Planar (channel-major) pixel grid with values nominally in [0, 255].
/// Channel order is RGB for colour images.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  ImageSize size() const { return {height_, width_}; }
  std::size_t pixel_count() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// ITU-R BT.601 luma for 3-channel input; copies single-channel input.
Image to_gray(const Image& image);

/// Clamps to [0,255] and rounds to 8 bits, interleaved HWC.
std::vector<std::uint8_t> to_bytes(const Image& image);
Image from_bytes(std::span<const std::uint8_t> bytes, int height, int width, int channels);

/// Rounds every value to the nearest integer in [0,255].
Image quantize(const Image& image);

double linf_distance(const Image& a, const Image& b);

/// Crop [x0,x1) x [y0,y1).
Image crop(const Image& image, int x0, int y0, int x1, int y1);

Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

}  // namespace lmb
