#include "lmbreak/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lmbreak/error.hpp"

namespace lmb {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) throw ShapeError("negative image dimension");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image to_gray(const Image& image) {
  if (image.channels() == 1) return image;
  if (image.channels() != 3) throw ShapeError("to_gray expects 1 or 3 channels");
  Image gray(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      gray.at(0, y, x) = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
  return gray;
}

static std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::vector<std::uint8_t> to_bytes(const Image& image) {
  const int h = image.height(), w = image.width(), c = image.channels();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out[(static_cast<std::size_t>(y) * w + x) * c + ch] = to_byte(image.at(ch, y, x));
  return out;
}

Image from_bytes(std::span<const std::uint8_t> bytes, int height, int width, int channels) {
  if (bytes.size() != static_cast<std::size_t>(height) * width * channels)
    throw ShapeError("byte buffer does not match image shape");
  Image image(height, width, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int ch = 0; ch < channels; ++ch)
        image.at(ch, y, x) = bytes[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  return image;
}

Image quantize(const Image& image) {
  Image out = image;
  for (double& v : out.values()) v = to_byte(v);
  return out;
}

double linf_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("linf_distance: shape mismatch");
  double m = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

Image crop(const Image& image, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 > image.width() || y1 > image.height() || x1 <= x0 || y1 <= y0)
    throw ShapeError("crop box outside image");
  Image out(y1 - y0, x1 - x0, image.channels());
  for (int c = 0; c < image.channels(); ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out.at(c, y - y0, x - x0) = image.at(c, y, x);
  return out;
}

Image load_png(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DataError("cannot read image: " + path.string());
  if (mat.depth() != CV_8U) throw DataError("expected 8-bit image: " + path.string());
  if (mat.channels() == 4) cv::cvtColor(mat, mat, cv::COLOR_BGRA2BGR);
  const int c = mat.channels();
  if (c != 1 && c != 3) throw DataError("unsupported channel count in " + path.string());
  Image image(mat.rows, mat.cols, c);
  for (int y = 0; y < mat.rows; ++y) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const int src = c == 3 ? 2 - ch : ch;  // BGR -> RGB
        image.at(ch, y, x) = row[x * c + src];
      }
  }
  return image;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  const int c = image.channels();
  cv::Mat mat(image.height(), image.width(), c == 3 ? CV_8UC3 : CV_8UC1);
  const auto bytes = to_bytes(image);
  for (int y = 0; y < image.height(); ++y) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int ch = 0; ch < c; ++ch) {
        const int dst = c == 3 ? 2 - ch : ch;
        row[x * c + dst] = bytes[(static_cast<std::size_t>(y) * image.width() + x) * c + ch];
      }
  }
  if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write image: " + path.string());
}

}  // namespace lmb
