#include "lmbreak/faces.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmbreak/error.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double hash_unit(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

// Smooth lattice noise in [-1, 1] with the given cell size.
double value_noise(std::uint64_t seed, double u, double v, double cell) {
  const double gu = u / cell, gv = v / cell;
  const double fu = std::floor(gu), fv = std::floor(gv);
  const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
  double tu = gu - fu, tv = gv - fv;
  tu = tu * tu * (3.0 - 2.0 * tu);
  tv = tv * tv * (3.0 - 2.0 * tv);
  const double a = hash_unit(seed, iu, iv), b = hash_unit(seed, iu + 1, iv);
  const double c = hash_unit(seed, iu, iv + 1), d = hash_unit(seed, iu + 1, iv + 1);
  return (a * (1 - tu) + b * tu) * (1 - tv) + (c * (1 - tu) + d * tu) * tv;
}

double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

double ellipse_distance(double u, double v, double cu, double cv, double au, double av) {
  const double r = std::hypot((u - cu) / au, (v - cv) / av);
  return (r - 1.0) * std::min(au, av);
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scale(const Rgb& c, double s) { return {c.r * s, c.g * s, c.b * s}; }

Rgb add(const Rgb& c, double d) { return {c.r + d, c.g + d, c.b + d}; }

Rgb jitter_color(Rgb base, Rgb spread, Rng& rng) {
  return {std::clamp(base.r + spread.r * rng.uniform(-1, 1), 0.0, 255.0),
          std::clamp(base.g + spread.g * rng.uniform(-1, 1), 0.0, 255.0),
          std::clamp(base.b + spread.b * rng.uniform(-1, 1), 0.0, 255.0)};
}

struct FaceFrame {
  double cx, cy, cos_t, sin_t;
  explicit FaceFrame(const FaceParams& p)
      : cx(p.center_x), cy(p.center_y), cos_t(std::cos(p.rotation_deg * kDeg)), sin_t(std::sin(p.rotation_deg * kDeg)) {}
  Point to_image(double u, double v) const { return {cx + cos_t * u - sin_t * v, cy + sin_t * u + cos_t * v}; }
  void to_local(double x, double y, double& u, double& v) const {
    const double dx = x - cx, dy = y - cy;
    u = cos_t * dx + sin_t * dy;
    v = -sin_t * dx + cos_t * dy;
  }
};

double hairline(const FaceParams& p, double u) {
  const double q = u / p.head_axis_x;
  return -0.70 * p.head_axis_y + 0.35 * p.head_axis_y * q * q;
}

double brow_line(const FaceParams& p) { return -p.eye_height - p.brow_offset; }

double mouth_centerline(const FaceParams& p, double u) {
  const double q = 2.0 * u / p.mouth_width;
  return p.mouth_offset + p.mouth_curvature * p.mouth_width * 0.25 * (1.0 - q * q);
}

}  // namespace

FaceParams sample_face_params(std::uint64_t seed, ImageSize size) {
  Rng rng(mix_seed(seed, 0x5eed));
  const double s = std::min(size.height, size.width) / 128.0;
  FaceParams p;
  p.center_x = size.width / 2.0 + rng.uniform(-5, 5) * s;
  p.center_y = size.height / 2.0 + rng.uniform(-3, 4) * s;
  p.head_axis_x = rng.uniform(36, 42) * s;
  p.head_axis_y = rng.uniform(44, 50) * s;
  p.rotation_deg = rng.uniform(-15, 15);
  p.eye_spacing = rng.uniform(32, 38) * s;
  p.eye_half_width = rng.uniform(7, 9) * s;
  p.eye_aperture = rng.uniform(3, 5) * s;
  p.eye_height = rng.uniform(9, 13) * s;
  p.brow_offset = rng.uniform(7, 10) * s;
  p.nose_length = rng.uniform(17, 22) * s;
  p.mouth_offset = rng.uniform(22, 26) * s;
  p.mouth_width = rng.uniform(22, 30) * s;
  p.mouth_curvature = rng.uniform(-0.25, 0.35);
  p.lip_thickness = rng.uniform(2.5, 4.0) * s;

  const double tone = rng.uniform();
  p.skin = jitter_color(mix(Rgb{236, 200, 172}, Rgb{125, 85, 60}, tone), Rgb{10, 10, 10}, rng);
  const double hair_level = rng.uniform(15, 110);
  p.hair = jitter_color(Rgb{hair_level * 1.1, hair_level * 0.9, hair_level * 0.7}, Rgb{12, 12, 12}, rng);
  p.iris = jitter_color(Rgb{rng.uniform(40, 120), rng.uniform(40, 110), rng.uniform(30, 120)}, Rgb{8, 8, 8}, rng);
  p.lip = jitter_color(Rgb{p.skin.r * 0.85 + 10, p.skin.g * 0.55, p.skin.b * 0.55}, Rgb{10, 8, 8}, rng);
  p.background_a = Rgb{rng.uniform(30, 225), rng.uniform(30, 225), rng.uniform(30, 225)};
  p.background_b = Rgb{rng.uniform(30, 225), rng.uniform(30, 225), rng.uniform(30, 225)};
  p.background_angle_deg = rng.uniform(0, 360);
  p.background_noise = rng.uniform(2, 6);
  p.texture_amplitude = rng.uniform(14, 20);
  p.seed = rng.next();
  p.texture_seed = rng.next();
  return p;
}

FaceParams vary_frame(const FaceParams& identity, std::uint64_t frame_seed) {
  Rng rng(mix_seed(frame_seed, 0xf7a3e));
  FaceParams p = identity;
  p.center_x += rng.uniform(-4, 4);
  p.center_y += rng.uniform(-3, 3);
  p.rotation_deg = std::clamp(identity.rotation_deg + rng.uniform(-10, 10), -15.0, 15.0);
  p.eye_aperture = std::max(2.0, identity.eye_aperture * rng.uniform(0.8, 1.2));
  p.mouth_curvature = std::clamp(identity.mouth_curvature + rng.uniform(-0.15, 0.15), -0.3, 0.4);
  p.background_angle_deg = identity.background_angle_deg + rng.uniform(-20, 20);
  p.seed = rng.next();
  return p;
}

LandmarkSet face_landmarks(const FaceParams& p) {
  using namespace face13;
  const FaceFrame frame(p);
  std::vector<Point> local(kCount);
  const double half = p.eye_spacing / 2.0;
  const double mouth_mid = mouth_centerline(p, 0.0);
  local[kLeftBrow] = {-half, brow_line(p)};
  local[kRightBrow] = {half, brow_line(p)};
  local[kLeftEyeOuter] = {-half - p.eye_half_width, -p.eye_height};
  local[kLeftEyeInner] = {-half + p.eye_half_width, -p.eye_height};
  local[kRightEyeInner] = {half - p.eye_half_width, -p.eye_height};
  local[kRightEyeOuter] = {half + p.eye_half_width, -p.eye_height};
  local[kNoseTip] = {0.0, -p.eye_height + p.nose_length};
  local[kMouthLeft] = {-p.mouth_width / 2.0, p.mouth_offset};
  local[kMouthRight] = {p.mouth_width / 2.0, p.mouth_offset};
  local[kMouthTop] = {0.0, mouth_mid - p.lip_thickness};
  local[kMouthBottom] = {0.0, mouth_mid + 1.2 * p.lip_thickness};
  local[kChin] = {0.0, p.head_axis_y};
  local[kForehead] = {0.0, 0.5 * (brow_line(p) + hairline(p, 0.0))};
  LandmarkSet set{LandmarkSchema::face13(), {}};
  set.coords.reserve(kCount);
  for (const Point& q : local) set.coords.push_back(frame.to_image(q.x, q.y));
  return set;
}

RenderedFace render_face(const FaceParams& p, ImageSize size) {
  if (size.height < 64 || size.width < 64)
    throw DataError("render_face: canvas " + std::to_string(size.width) + "x" + std::to_string(size.height) +
                    " is smaller than the 64x64 minimum");
  LandmarkSet landmarks = face_landmarks(p);
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const Point& q = landmarks[i];
    if (!(q.x >= 0.0 && q.x < size.width && q.y >= 0.0 && q.y < size.height))
      throw DataError("render_face: landmark '" + landmarks.schema.name(i) + "' at (" + std::to_string(q.x) + ", " +
                      std::to_string(q.y) + ") does not fit a " + std::to_string(size.width) + "x" +
                      std::to_string(size.height) + " canvas");
  }

  const FaceFrame frame(p);
  const double bg_dx = std::cos(p.background_angle_deg * kDeg), bg_dy = std::sin(p.background_angle_deg * kDeg);
  const double diag = std::hypot(size.width, size.height);
  const double half = p.eye_spacing / 2.0;
  const double brow_half_width = p.eye_half_width + 2.0;
  const double brow_thickness = 2.6;
  const double iris_radius = std::min(p.eye_aperture * 1.05, p.eye_half_width * 0.55);
  const double nose_tip_v = -p.eye_height + p.nose_length;
  const Rgb brow_color = scale(p.hair, 0.9);
  const Rgb sclera{235, 232, 225};
  const Rgb line_color = scale(p.skin, 0.35);

  Image image(size.height, size.width, 3);
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const double t = std::clamp(0.5 + ((x - size.width / 2.0) * bg_dx + (y - size.height / 2.0) * bg_dy) / diag,
                                  0.0, 1.0);
      Rgb c = mix(p.background_a, p.background_b, t);
      c = add(c, p.background_noise * hash_unit(p.seed, x, y) * 1.7320508);

      double u, v;
      frame.to_local(x, y, u, v);

      // hair mass behind the head
      const double hair_cov = coverage(ellipse_distance(u, v, 0.0, -4.0, p.head_axis_x + 4.0, p.head_axis_y + 3.0)) *
                              std::clamp(-(v - 0.1 * p.head_axis_y) / 3.0, 0.0, 1.0);
      const double hair_tex = 10.0 * value_noise(p.texture_seed ^ 0x4a1, u, v, 2.0);
      c = mix(c, add(p.hair, hair_tex), hair_cov);

      // skin
      const double head_cov = coverage(ellipse_distance(u, v, 0.0, 0.0, p.head_axis_x, p.head_axis_y));
      if (head_cov > 0.0) {
        const double r2 = (u / p.head_axis_x) * (u / p.head_axis_x) + (v / p.head_axis_y) * (v / p.head_axis_y);
        const double shade = 1.0 - 0.18 * std::min(r2, 1.0);
        const double tex = p.texture_amplitude * (0.65 * value_noise(p.texture_seed, u, v, 5.0) +
                                                  0.35 * value_noise(p.texture_seed ^ 0x77, u, v, 2.2) +
                                                  1.0 * value_noise(p.texture_seed ^ 0x3c9, u, v, 1.1));
        Rgb skin = add(scale(p.skin, shade), tex);
        // hair cap above the hairline
        const double cap = std::clamp((hairline(p, u) - v) / 1.5 + 0.5, 0.0, 1.0);
        skin = mix(skin, add(p.hair, hair_tex), cap);
        c = mix(c, skin, head_cov);
      }

      // brows
      for (int side = -1; side <= 1; side += 2) {
        const double bu = (u - side * half) / brow_half_width;
        if (std::abs(bu) > 1.2) continue;
        const double centre = brow_line(p) + 2.0 * bu * bu;
        const double along = coverage((std::abs(bu) - 1.0) * brow_half_width);
        const double across = coverage(std::abs(v - centre) - brow_thickness / 2.0);
        c = mix(c, brow_color, along * across);
      }

      // eyes
      for (int side = -1; side <= 1; side += 2) {
        const double eu = side * half;
        const double d = ellipse_distance(u, v, eu, -p.eye_height, p.eye_half_width, p.eye_aperture);
        if (d > 2.0) continue;
        c = mix(c, line_color, coverage(d - 0.8) * (1.0 - coverage(d)));
        c = mix(c, sclera, coverage(d));
        const double di = std::hypot(u - eu, v + p.eye_height) - iris_radius;
        c = mix(c, p.iris, coverage(di) * coverage(d));
        const double dp = std::hypot(u - eu, v + p.eye_height) - iris_radius * 0.45;
        c = mix(c, Rgb{15, 15, 15}, coverage(dp) * coverage(d));
      }

      // nose: bridge shadow, nostrils
      if (v > -p.eye_height + 3.0 && v < nose_tip_v + 1.0) {
        const double bridge = coverage(std::abs(u - 1.2) - 0.9);
        c = mix(c, scale(p.skin, 0.78), 0.6 * bridge);
      }
      for (int side = -1; side <= 1; side += 2) {
        const double dn = ellipse_distance(u, v, side * 3.6, nose_tip_v - 0.5, 2.0, 1.3);
        c = mix(c, scale(p.skin, 0.35), coverage(dn));
      }
      c = mix(c, scale(p.skin, 1.08), 0.8 * coverage(ellipse_distance(u, v, 0.0, nose_tip_v - 2.0, 2.2, 1.6)));

      // mouth
      const double q = 2.0 * u / p.mouth_width;
      if (std::abs(q) <= 1.05) {
        const double taper = std::sqrt(std::max(0.0, 1.0 - q * q));
        const double mid = mouth_centerline(p, u);
        const double top = mid - p.lip_thickness * taper;
        const double bottom = mid + 1.2 * p.lip_thickness * taper;
        const double inside = coverage(top - v) * coverage(v - bottom) * coverage((std::abs(q) - 1.0) * p.mouth_width / 2);
        c = mix(c, p.lip, inside);
        c = mix(c, scale(p.lip, 0.35), coverage(std::abs(v - mid) - 0.6) * coverage((std::abs(q) - 1.0) * p.mouth_width / 2));
      }

      image.at(0, y, x) = std::clamp(c.r, 0.0, 255.0);
      image.at(1, y, x) = std::clamp(c.g, 0.0, 255.0);
      image.at(2, y, x) = std::clamp(c.b, 0.0, 255.0);
    }
  }
  return {quantize(image), std::move(landmarks)};
}

}  // namespace lmb
