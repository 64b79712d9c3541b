#include "lmbreak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lmbreak/error.hpp"

namespace lmb {

double nme(const LandmarkSet& pred, const LandmarkSet& gt) {
  if (pred.size() != gt.size() || pred.size() == 0) throw ShapeError("nme: landmark sets differ in size");
  if (!(pred.schema == gt.schema)) throw ShapeError("nme: landmark schemas differ");
  const Point& l = gt.named(kLeftEyeOuterName);
  const Point& r = gt.named(kRightEyeOuterName);
  const double d = std::hypot(l.x - r.x, l.y - r.y);
  if (!(d > 0.0)) throw DataError("nme: degenerate ground truth (zero inter-ocular distance)");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return sum / (static_cast<double>(pred.size()) * d);
}

namespace {

std::vector<double> gaussian_window(const SsimParams& p) {
  std::vector<double> w(static_cast<std::size_t>(p.window));
  const int r = p.window / 2;
  double sum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-((i - r) * (i - r)) / (2.0 * p.sigma * p.sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

void check_ssim_inputs(const Image& a, const Image& b, const SsimParams& p) {
  if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
  if (a.height() < p.window || a.width() < p.window)
    throw ShapeError("ssim: image " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                     " is smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
}

// Valid-region separable filter of a single-channel plane.
void filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& win,
                  std::vector<double>& out) {
  const int n = static_cast<int>(win.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += win[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  out.assign(static_cast<std::size_t>(oh) * ow, 0.0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += win[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  check_ssim_inputs(a, b, p);
  const Image ga = to_gray(a), gb = to_gray(b);
  const int h = ga.height(), w = ga.width();
  const auto win = gaussian_window(p);
  std::vector<double> x(ga.values().begin(), ga.values().end()), y(gb.values().begin(), gb.values().end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  std::vector<double> mx, my, sxx, syy, sxy;
  filter_valid(x, h, w, win, mx);
  filter_valid(y, h, w, win, my);
  filter_valid(xx, h, w, win, sxx);
  filter_valid(yy, h, w, win, syy);
  filter_valid(xy, h, w, win, sxy);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double sum = 0.0;
  const std::size_t n = mx.size();
#pragma omp parallel for reduction(+ : sum) schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return sum / static_cast<double>(n);
}

namespace reference {

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  check_ssim_inputs(a, b, p);
  const Image ga = to_gray(a), gb = to_gray(b);
  const auto w1 = gaussian_window(p);
  const int n = p.window;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double sum = 0.0;
  long count = 0;
  for (int y0 = 0; y0 + n <= ga.height(); ++y0)
    for (int x0 = 0; x0 + n <= ga.width(); ++x0) {
      double mx = 0, my = 0;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const double wt = w1[static_cast<std::size_t>(j)] * w1[static_cast<std::size_t>(i)];
          mx += wt * ga.at(0, y0 + j, x0 + i);
          my += wt * gb.at(0, y0 + j, x0 + i);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const double wt = w1[static_cast<std::size_t>(j)] * w1[static_cast<std::size_t>(i)];
          const double dx = ga.at(0, y0 + j, x0 + i) - mx, dy = gb.at(0, y0 + j, x0 + i) - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / static_cast<double>(count);
}

}  // namespace reference

Roi landmark_roi(const LandmarkSet& gt, double margin_frac, ImageSize size) {
  if (margin_frac < 0.0) throw Error("landmark_roi: margin must be non-negative");
  if (gt.size() == 0) throw DataError("landmark_roi: no landmarks");
  double x0 = gt[0].x, x1 = gt[0].x, y0 = gt[0].y, y1 = gt[0].y;
  for (const Point& p : gt.coords) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double m = margin_frac * std::hypot(x1 - x0, y1 - y0);
  Roi r;
  r.x0 = std::clamp(static_cast<int>(std::floor(x0 - m)), 0, size.width - 1);
  r.y0 = std::clamp(static_cast<int>(std::floor(y0 - m)), 0, size.height - 1);
  r.x1 = std::clamp(static_cast<int>(std::ceil(x1 + m)) + 1, r.x0 + 1, size.width);
  r.y1 = std::clamp(static_cast<int>(std::ceil(y1 + m)) + 1, r.y0 + 1, size.height);
  return r;
}

double mask_ssim(const Image& a, const Image& b, const Roi& roi, const SsimParams& params) {
  if (!a.same_shape(b)) throw ShapeError("mask_ssim: image shapes differ");
  if (roi.x0 < 0 || roi.y0 < 0 || roi.x1 > a.width() || roi.y1 > a.height() || roi.width() <= 0 || roi.height() <= 0)
    throw ShapeError("mask_ssim: roi outside the image or empty");
  if (roi.width() < params.window || roi.height() < params.window)
    throw ShapeError("mask_ssim: roi smaller than the SSIM window");
  return ssim(crop(a, roi.x0, roi.y0, roi.x1, roi.y1), crop(b, roi.x0, roi.y0, roi.x1, roi.y1), params);
}

}  // namespace lmb
