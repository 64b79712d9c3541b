#pragma once

#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"

namespace lmb {

/// Mean point-to-point distance over the inter-ocular distance of `gt`
/// (left eye outer corner to right eye outer corner).
double nme(const LandmarkSet& pred, const LandmarkSet& gt);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

/// Mean SSIM over the valid region (Gaussian window); colour inputs are
/// converted to luma first.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

/// Axis-aligned box [x0, x1) x [y0, y1) in pixels.
struct Roi {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const Roi&) const = default;
};

/// Bounding box of the landmarks grown by margin_frac of its diagonal on every
/// side, rounded outward and clipped to the image.
Roi landmark_roi(const LandmarkSet& gt, double margin_frac, ImageSize image_size);

/// SSIM of the two images restricted to the roi crop.
double mask_ssim(const Image& a, const Image& b, const Roi& roi, const SsimParams& params = {});

namespace reference {

/// Direct per-window evaluation without separable filtering or threading.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

}  // namespace reference

}  // namespace lmb
