#include <doctest.h>

#include <cmath>

#include "lmbreak/codecs.hpp"
#include "lmbreak/dataset.hpp"
#include "lmbreak/error.hpp"
#include "lmbreak/metrics.hpp"
#include "lmbreak/rng.hpp"

using namespace lmb;

namespace {

LandmarkSet gt_face(std::uint64_t seed) { return render_face(sample_face_params(seed)).landmarks; }

Image noise_image(int h, int w, int c, Rng& rng) {
  Image img(h, w, c);
  for (double& v : img.values()) v = std::round(rng.uniform(0.0, 255.0));
  return img;
}

std::vector<Image> clip(std::size_t n) {
  const DatasetHandle d = make_identity_dataset(777, n, 5);
  std::vector<Image> frames;
  for (std::size_t i = 0; i < n; ++i) frames.push_back(d.load_image(i));
  return frames;
}

double mean_ssim(const std::vector<Image>& a, const std::vector<Image>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += ssim(a[i], b[i]);
  return s / static_cast<double>(a.size());
}

// Direct SSIM: explicit 2-D Gaussian window at every valid position.
double direct_ssim(const Image& a, const Image& b) {
  auto luma = [](const Image& im, int y, int x) {
    return im.channels() == 1 ? im.at(0, y, x) : 0.299 * im.at(0, y, x) + 0.587 * im.at(1, y, x) + 0.114 * im.at(2, y, x);
  };
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double w[11][11], wsum = 0.0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) wsum += w[dy + 5][dx + 5] = std::exp(-(dx * dx + dy * dy) / 4.5);
  double total = 0.0;
  int count = 0;
  for (int y = 5; y < a.height() - 5; ++y)
    for (int x = 5; x < a.width() - 5; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) {
          const double k = w[dy + 5][dx + 5] / wsum;
          const double va = luma(a, y + dy, x + dx), vb = luma(b, y + dy, x + dx);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      total += ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
               ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
      ++count;
    }
  return total / count;
}

int changed_pixels(const Image& a, const Image& b) {
  int n = 0;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) n += a.values()[i] != b.values()[i];
  return n;
}

}  // namespace

TEST_CASE("NME: one displaced landmark scores d / (13 D)") {
  const LandmarkSet gt = gt_face(9);
  const double iod = std::hypot(gt[face13::kLeftEyeOuter].x - gt[face13::kRightEyeOuter].x,
                                gt[face13::kLeftEyeOuter].y - gt[face13::kRightEyeOuter].y);
  for (std::size_t j = 0; j < 13; ++j) {
    LandmarkSet pred = gt;
    pred[j].x += 3.0;
    pred[j].y -= 4.0;
    CHECK(nme(pred, gt) == doctest::Approx(5.0 / (13 * iod)).epsilon(1e-12));
  }
}

TEST_CASE("NME: identical sets score zero, a uniform shift scores shift / inter-ocular") {
  const LandmarkSet gt = gt_face(1);
  CHECK(nme(gt, gt) == 0.0);
  LandmarkSet moved = gt;
  for (Point& p : moved.coords) p.x += 3.0;
  const double iod = std::hypot(gt[face13::kLeftEyeOuter].x - gt[face13::kRightEyeOuter].x,
                                gt[face13::kLeftEyeOuter].y - gt[face13::kRightEyeOuter].y);
  CHECK(nme(moved, gt) == doctest::Approx(3.0 / iod));
}

TEST_CASE("NME: hand-computed two-point example") {
  const LandmarkSchema s({kLeftEyeOuterName, kRightEyeOuterName});
  const LandmarkSet gt{s, {{0, 0}, {10, 0}}};
  const LandmarkSet pred{s, {{3, 4}, {10, 0}}};
  CHECK(nme(pred, gt) == doctest::Approx(5.0 / 2.0 / 10.0));
}

TEST_CASE("NME is invariant to translating both sets and scales with the error") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const LandmarkSet gt = gt_face(rng.next());
    LandmarkSet pred = gt;
    for (Point& p : pred.coords) p = {p.x + rng.normal() * 3, p.y + rng.normal() * 3};
    const double base = nme(pred, gt);
    CHECK(base >= 0.0);
    const double dx = rng.uniform(-50, 50), dy = rng.uniform(-50, 50);
    LandmarkSet a = pred, b = gt;
    for (Point& p : a.coords) p = {p.x + dx, p.y + dy};
    for (Point& p : b.coords) p = {p.x + dx, p.y + dy};
    CHECK(nme(a, b) == doctest::Approx(base).epsilon(1e-9));
    LandmarkSet doubled = gt;
    for (std::size_t i = 0; i < gt.size(); ++i)
      doubled[i] = {gt[i].x + 2 * (pred[i].x - gt[i].x), gt[i].y + 2 * (pred[i].y - gt[i].y)};
    CHECK(nme(doubled, gt) == doctest::Approx(2 * base).epsilon(1e-9));
  }
}

TEST_CASE("NME rejects degenerate or mismatched input") {
  const LandmarkSet gt = gt_face(3);
  LandmarkSet bad = gt;
  bad[face13::kRightEyeOuter] = bad[face13::kLeftEyeOuter];
  CHECK_THROWS_AS(nme(gt, bad), DataError);
  LandmarkSet shorter{LandmarkSchema({kLeftEyeOuterName, kRightEyeOuterName}), {{0, 0}, {1, 1}}};
  CHECK_THROWS_AS(nme(shorter, gt), ShapeError);
}

TEST_CASE("SSIM of an image with itself is exactly 1") {
  Rng rng(4);
  const Image a = noise_image(40, 37, 3, rng);
  CHECK(ssim(a, a) == 1.0);
  CHECK(reference::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("SSIM of constant images has the closed form") {
  const double c1 = std::pow(0.01 * 255, 2);
  for (auto [u, v] : {std::pair{10.0, 200.0}, {128.0, 128.0}, {0.0, 255.0}, {50.0, 60.0}}) {
    const Image a(20, 20, 1, u), b(20, 20, 1, v);
    CHECK(ssim(a, b) == doctest::Approx((2 * u * v + c1) / (u * u + v * v + c1)).epsilon(1e-12));
  }
}

TEST_CASE("SSIM of a fixed 64x64 pair matches the direct formula") {
  const Image a = render_face(sample_face_params(21, {64, 64}), {64, 64}).image;
  Image b = a;
  Rng rng(22);
  for (double& v : b.values()) v = std::clamp(v + rng.normal() * 20, 0.0, 255.0);
  CHECK(std::abs(ssim(a, b) - direct_ssim(a, b)) < 1e-6);
  CHECK(std::abs(reference::ssim(a, b) - direct_ssim(a, b)) < 1e-6);
}

TEST_CASE("SSIM of an image and its inverse is negative") {
  Rng rng(5);
  const Image a = noise_image(32, 32, 1, rng);
  Image inv = a;
  for (double& v : inv.values()) v = 255.0 - v;
  CHECK(ssim(a, inv) < 0.0);
}

TEST_CASE("fast SSIM agrees with the direct implementation") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 11 + static_cast<int>(rng.below(30)), w = 11 + static_cast<int>(rng.below(30));
    const int c = rng.below(2) ? 3 : 1;
    const Image a = noise_image(h, w, c, rng);
    Image b = a;
    for (double& v : b.values()) v = std::clamp(v + rng.normal() * 30, 0.0, 255.0);
    const double s = ssim(a, b);
    CHECK(s == doctest::Approx(reference::ssim(a, b)).epsilon(1e-6).scale(1e-6));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(ssim(b, a) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("SSIM rejects images smaller than the window and mismatched shapes") {
  CHECK_THROWS_AS(ssim(Image(10, 20, 1), Image(10, 20, 1)), ShapeError);
  CHECK_THROWS_AS(ssim(Image(20, 20, 1), Image(20, 21, 1)), ShapeError);
}

TEST_CASE("landmark ROI hand-computed") {
  const LandmarkSchema s({kLeftEyeOuterName, kRightEyeOuterName});
  const LandmarkSet l{s, {{40, 50}, {70, 90}}};
  // diagonal 50, margin 0.1 -> 5 px on every side
  const Roi r = landmark_roi(l, 0.1, {128, 128});
  CHECK(r == Roi{35, 45, 76, 96});
  CHECK(landmark_roi(l, 10.0, {128, 128}) == Roi{0, 0, 128, 128});
  CHECK_THROWS(landmark_roi(l, -0.1, {128, 128}));
}

TEST_CASE("ROI SSIM ignores changes outside the box") {
  Rng rng(7);
  const RenderedFace f = render_face(sample_face_params(8));
  const Roi roi = landmark_roi(f.landmarks, 0.1, f.image.size());
  Image b = f.image;
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      if (x < roi.x0 || x >= roi.x1 || y < roi.y0 || y >= roi.y1)
        for (int c = 0; c < 3; ++c) b.at(c, y, x) = rng.uniform(0, 255);
  CHECK(mask_ssim(f.image, b, roi) == 1.0);
  CHECK(ssim(f.image, b) < 1.0);
  CHECK_THROWS_AS(mask_ssim(f.image, b, Roi{0, 0, 8, 8}), ShapeError);
  CHECK_THROWS_AS(mask_ssim(f.image, b, Roi{100, 100, 140, 140}), ShapeError);
}

TEST_CASE("JPEG: higher quality preserves more structure") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image img = render_face(sample_face_params(seed)).image;
    const Image q95 = jpeg_roundtrip(img, 95), q50 = jpeg_roundtrip(img, 50);
    CHECK(q95.same_shape(img));
    for (double v : q50.values()) CHECK(v == std::round(v));
    if (ssim(img, q95) > ssim(img, q50)) ++wins;
  }
  CHECK(wins == 20);
}

TEST_CASE("JPEG: re-encoding at the same quality changes little") {
  const Image img = render_face(sample_face_params(11)).image;
  const Image once = jpeg_roundtrip(img, 50), twice = jpeg_roundtrip(once, 50);
  CHECK(ssim(once, twice) > ssim(img, once));
  CHECK(ssim(once, twice) > 0.95);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image f = render_face(sample_face_params(seed)).image;
    const Image a = jpeg_roundtrip(f, 50), b = jpeg_roundtrip(a, 50);
    CHECK(changed_pixels(a, b) < changed_pixels(f, a));
  }
}

TEST_CASE("JPEG rejects quality outside [1, 100]") {
  const Image img(16, 16, 3, 100.0);
  CHECK_THROWS(jpeg_roundtrip(img, 0));
  CHECK_THROWS(jpeg_roundtrip(img, 101));
  CHECK_NOTHROW(jpeg_roundtrip(img, 1));
}

TEST_CASE("video channels keep frame count and shape, the second pass degrades further") {
  const std::vector<Image> frames = clip(24);
  const VideoRoundtrip c = video_roundtrip(frames, VideoChain::C);
  const VideoRoundtrip c2 = video_roundtrip(frames, VideoChain::C2);
  REQUIRE(c.frames.size() == 24);
  REQUIRE(c2.frames.size() == 24);
  for (const Image& f : c2.frames) CHECK(f.same_shape(frames[0]));
  MESSAGE("video backend: ", c.backend);
  const double s_c = mean_ssim(frames, c.frames), s_c2 = mean_ssim(frames, c2.frames);
  CHECK(s_c2 <= s_c + 0.02);
  CHECK(s_c < 0.999);
  CHECK(s_c > 0.5);
}

TEST_CASE("video round-trip of a single frame") {
  const std::vector<Image> frames = clip(1);
  const VideoRoundtrip r = video_roundtrip(frames, VideoChain::C);
  REQUIRE(r.frames.size() == 1);
  CHECK(ssim(r.frames[0], frames[0]) > 0.5);
  CHECK(apply_degradation(frames[0], Degradation::parse("videoC2")).same_shape(frames[0]));
}

TEST_CASE("video rejects empty or ragged clips") {
  CHECK_THROWS_AS(video_roundtrip({}, VideoChain::C), ShapeError);
  CHECK_THROWS_AS(video_roundtrip({Image(16, 16, 3), Image(16, 32, 3)}, VideoChain::C), ShapeError);
}

TEST_CASE("a failing external encoder surfaces its output") {
  VideoCodecOptions o;
  o.command_c = "echo encoder-says-no; exit 3";
  try {
    video_roundtrip(clip(2), VideoChain::C, o);
    FAIL("expected CodecError");
  } catch (const CodecError& e) {
    CHECK(std::string(e.what()).find("encoder-says-no") != std::string::npos);
  }
}

TEST_CASE("block-DCT stand-in: finer steps are closer, output is 8-bit") {
  const Image img = render_face(sample_face_params(12)).image;
  const Image fine = block_dct_roundtrip(img, 2.0), coarse = block_dct_roundtrip(img, 40.0);
  CHECK(ssim(img, fine) > ssim(img, coarse));
  CHECK(linf_distance(img, fine) <= 8.0);
  for (double v : coarse.values()) CHECK((v == std::round(v) && v >= 0 && v <= 255));
  CHECK_THROWS(block_dct_roundtrip(img, 0.0));
}

TEST_CASE("degradation tags parse and print back") {
  for (const char* t : {"none", "jpeg75", "jpeg50", "jpeg1", "jpeg100", "videoC", "videoC2"})
    CHECK(Degradation::parse(t).tag() == t);
  CHECK(Degradation::parse("jpeg75").quality == 75);
  CHECK(Degradation::parse("videoC2").is_video());
  CHECK_FALSE(Degradation::parse("jpeg50").is_video());
  for (const char* t : {"jpeg", "jpeg0", "jpeg101", "webp", "videoC3", "", "jpegx"}) CHECK_THROWS(Degradation::parse(t));
  const Image img(16, 16, 3, 9.0);
  CHECK(apply_degradation(img, Degradation::parse("none")) == img);
}
