#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>
#include <algorithm>

#include "lmbreak/dataset.hpp"
#include "lmbreak/error.hpp"
#include "lmbreak/faces.hpp"
#include "lmbreak/hash.hpp"
#include "lmbreak/heatmap.hpp"
#include "lmbreak/rng.hpp"

using namespace lmb;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("lmbreak_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("sample_face_params is a deterministic function of the seed") {
  CHECK(sample_face_params(7) == sample_face_params(7));
  CHECK_FALSE(sample_face_params(7) == sample_face_params(8));
}

TEST_CASE("1000 random faces keep every landmark on the canvas and match their stored geometry") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const FaceParams p = sample_face_params(seed);
    const RenderedFace f = render_face(p);
    REQUIRE(f.landmarks.size() == 13);
    for (const Point& q : f.landmarks.coords) {
      REQUIRE(q.x >= 0.0);
      REQUIRE(q.x < 128.0);
      REQUIRE(q.y >= 0.0);
      REQUIRE(q.y < 128.0);
    }
    REQUIRE(f.landmarks == face_landmarks(p));
  }
}

TEST_CASE("rendering is bit-identical for identical params and stays in [0,255]") {
  const FaceParams p = sample_face_params(42);
  const RenderedFace a = render_face(p), b = render_face(p);
  CHECK(a.image == b.image);
  for (double v : a.image.values()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 255.0);
    REQUIRE(v == std::round(v));
  }
}

TEST_CASE("upright centred face is left/right symmetric") {
  FaceParams p;  // defaults: centred, no rotation, curvature 0
  const LandmarkSet l = render_face(p).landmarks;
  using namespace face13;
  CHECK(std::abs((l[kLeftEyeOuter].x + l[kRightEyeOuter].x) / 2 - p.center_x) <= 1.0);
  CHECK(std::abs((l[kLeftEyeInner].x + l[kRightEyeInner].x) / 2 - p.center_x) <= 1.0);
  CHECK(std::abs(l[kLeftEyeOuter].y - l[kRightEyeOuter].y) <= 1.0);
  CHECK(l[kMouthTop].x == doctest::Approx(l[kMouthBottom].x));
}

TEST_CASE("90 degree rotation rotates the landmarks about the head centre") {
  FaceParams p;
  const LandmarkSet upright = render_face(p).landmarks;
  p.rotation_deg = 90.0;
  const LandmarkSet turned = render_face(p).landmarks;
  for (std::size_t i = 0; i < upright.size(); ++i) {
    // image y points down, so a +90 degree turn maps (dx, dy) to (-dy, dx)
    const double dx = upright[i].x - p.center_x, dy = upright[i].y - p.center_y;
    const double ex = p.center_x - dy, ey = p.center_y + dx;
    CHECK(std::hypot(turned[i].x - ex, turned[i].y - ey) <= 1.0);
  }
}

TEST_CASE("render_face rejects canvases that are too small or cut landmarks") {
  CHECK_THROWS_AS(render_face(FaceParams{}, {48, 48}), DataError);
  FaceParams p;
  p.center_x = 4.0;
  try {
    render_face(p);
    FAIL("expected rejection");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("does not fit") != std::string::npos);
  }
}

TEST_CASE("vary_frame keeps identity and changes the pose") {
  const FaceParams id = sample_face_params(3);
  const FaceParams f = vary_frame(id, 11);
  CHECK(f.skin == id.skin);
  CHECK(f.texture_seed == id.texture_seed);
  CHECK(f.eye_spacing == id.eye_spacing);
  CHECK_FALSE(f == id);
  CHECK(vary_frame(id, 11) == f);
}

TEST_CASE("heat-map target at an exact grid point peaks there with value 1") {
  LandmarkSet l{LandmarkSchema({"p"}), {{40.0, 80.0}}};
  const HeatmapTargets t = render_heatmap_targets(l, {32, 32}, 4, 1.5);
  CHECK_FALSE(t.clamped[0]);
  CHECK(t.maps.at(0, 20, 10) == 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (x != 10 || y != 20) CHECK(t.maps.at(0, y, x) < 1.0);
}

TEST_CASE("large sigma flattens the map") {
  LandmarkSet l{LandmarkSchema({"p"}), {{50.0, 70.0}}};
  const HeatmapTargets t = render_heatmap_targets(l, {32, 32}, 4, 1e4);
  auto m = t.maps.map(0);
  const double mx = *std::max_element(m.begin(), m.end()), mn = *std::min_element(m.begin(), m.end());
  CHECK(mx / mn == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("map sum matches a dense evaluation of the Gaussian formula") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double x = rng.uniform(0, 127), y = rng.uniform(0, 127);
    LandmarkSet l{LandmarkSchema({"p"}), {{x, y}}};
    const HeatmapTargets t = render_heatmap_targets(l, {32, 32}, 4, 1.5);
    // oracle: plain Gaussian normalised by its value at the rounded-half-down grid point
    const double cx = x / 4.0, cy = y / 4.0;
    const double gx = std::ceil(cx - 0.5), gy = std::ceil(cy - 0.5);
    auto g = [&](double px, double py) { return std::exp(-((px - cx) * (px - cx) + (py - cy) * (py - cy)) / (2 * 1.5 * 1.5)); };
    double oracle = 0.0, sum = 0.0;
    for (int py = 0; py < 32; ++py)
      for (int px = 0; px < 32; ++px) {
        oracle += g(px, py) / g(gx, gy);
        sum += t.maps.at(0, py, px);
      }
    CHECK(sum == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("target argmax is the landmark's grid cell and the peak is exactly 1") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RenderedFace f = render_face(sample_face_params(seed));
    const HeatmapTargets t = render_heatmap_targets(f.landmarks, {32, 32}, 4, 1.5);
    for (int i = 0; i < 13; ++i) {
      auto m = t.maps.map(i);
      const auto best = std::max_element(m.begin(), m.end()) - m.begin();
      const int gx = nearest_grid_index(f.landmarks[i].x / 4), gy = nearest_grid_index(f.landmarks[i].y / 4);
      REQUIRE(best == gy * 32 + gx);
      REQUIRE(m[best] == 1.0);
    }
  }
}

TEST_CASE("landmarks outside the map are clamped and flagged") {
  LandmarkSet l{LandmarkSchema({"a", "b"}), {{-9.0, 10.0}, {20.0, 20.0}}};
  const HeatmapTargets t = render_heatmap_targets(l, {8, 8}, 4, 1.5);
  CHECK(t.clamped[0]);
  CHECK_FALSE(t.clamped[1]);
  // centre clamped to (0, 2.5); the half-way tie resolves to grid row 2
  CHECK(t.maps.at(0, 2, 0) == 1.0);
  CHECK(t.maps.at(0, 4, 0) == doctest::Approx(std::exp(-(1.5 * 1.5 - 0.5 * 0.5) / 4.5)));
  CHECK_THROWS(render_heatmap_targets(l, {8, 8}, 4, 0.0));
}

TEST_CASE("annotated directory with three records loads all three") {
  const fs::path dir = scratch_dir("three");
  const DatasetHandle synth = make_synthetic_dataset(3, 9);
  export_dataset(synth, dir);
  LoadDiagnostics diag;
  const DatasetHandle h = load_annotated_dataset(dir, &diag);
  CHECK(h.size() == 3);
  CHECK(diag.messages.empty());
  CHECK(h.provenance == Provenance::Ingested);
  fs::remove_all(dir);
}

TEST_CASE("annotation pointing at a missing image is reported by name") {
  const fs::path dir = scratch_dir("missing");
  const DatasetHandle synth = make_synthetic_dataset(2, 9);
  export_dataset(synth, dir);
  fs::remove(dir / "images" / (synth.records[1].id + ".png"));
  LoadDiagnostics diag;
  const DatasetHandle h = load_annotated_dataset(dir, &diag);
  CHECK(h.size() == 1);
  REQUIRE(diag.messages.size() == 1);
  CHECK(diag.messages[0].find(synth.records[1].id + ".png") != std::string::npos);

  fs::remove(dir / "images" / (synth.records[0].id + ".png"));
  try {
    load_annotated_dataset(dir);
    FAIL("expected failure on empty result");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(synth.records[0].id + ".png") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed annotations and schemas without the eye pair are rejected") {
  const fs::path dir = scratch_dir("bad");
  write_file(dir / "annotations.json", "{not json");
  CHECK_THROWS_AS(load_annotated_dataset(dir), DataError);
  write_file(dir / "annotations.json", R"({"schema": ["a", "b"], "records": []})");
  CHECK_THROWS_AS(load_annotated_dataset(dir), DataError);
  fs::remove_all(dir);
}

TEST_CASE("schema with a different landmark count is accepted when it names the eye pair") {
  const fs::path dir = scratch_dir("five");
  const RenderedFace f = render_face(sample_face_params(1));
  fs::create_directories(dir / "img");
  save_png(f.image, dir / "img" / "a.png");
  write_file(dir / "annotations.json",
             R"({"schema": ["left eye outer corner", "right eye outer corner", "nose tip"],
                 "records": [{"image": "img/a.png", "landmarks": [[30, 50], [90, 50], [60, 70]]}]})");
  const DatasetHandle h = load_annotated_dataset(dir);
  CHECK(h.schema.size() == 3);
  CHECK(h.records[0].landmarks[2] == Point{60, 70});
  CHECK(h.load_image(0) == f.image);
  fs::remove_all(dir);
}

TEST_CASE("export then import round-trips coordinates and bytes") {
  const fs::path dir = scratch_dir("roundtrip");
  const DatasetHandle synth = make_synthetic_dataset(5, 21);
  export_dataset(synth, dir);
  const DatasetHandle back = load_annotated_dataset(dir);
  REQUIRE(back.size() == synth.size());
  for (std::size_t i = 0; i < synth.size(); ++i) {
    CHECK(back.records[i].id == synth.records[i].id);
    CHECK(back.load_image(i) == synth.load_image(i));
    for (std::size_t j = 0; j < 13; ++j) {
      // the file stores two decimals
      CHECK(back.records[i].landmarks[j].x == doctest::Approx(std::round(synth.records[i].landmarks[j].x * 100) / 100));
      CHECK(back.records[i].landmarks[j].y == doctest::Approx(std::round(synth.records[i].landmarks[j].y * 100) / 100));
    }
  }
  const std::string first = sha256_file(dir / "annotations.json");
  const fs::path dir2 = scratch_dir("roundtrip2");
  export_dataset(back, dir2);
  CHECK(sha256_file(dir2 / "annotations.json") == first);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("split_dataset partitions deterministically") {
  const DatasetHandle all = make_synthetic_dataset(100, 4);
  const auto a = split_dataset(all, {0.8, 0.1, 0.1}, 17);
  const auto b = split_dataset(all, {0.8, 0.1, 0.1}, 17);
  CHECK(a[0].size() == 80);
  CHECK(a[1].size() == 10);
  CHECK(a[2].size() == 10);
  std::multiset<std::string> ids;
  for (int k = 0; k < 3; ++k) {
    REQUIRE(a[k].size() == b[k].size());
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      CHECK(a[k].records[i].id == b[k].records[i].id);
      ids.insert(a[k].records[i].id);
    }
  }
  std::multiset<std::string> expected;
  for (const auto& r : all.records) expected.insert(r.id);
  CHECK(ids == expected);  // disjoint and exhaustive
  CHECK(a[0].split == Split::Train);
  CHECK(a[2].split == Split::Test);
}

TEST_CASE("split_dataset rejects empty splits and bad ratios") {
  const DatasetHandle all = make_synthetic_dataset(10, 4);
  CHECK_THROWS(split_dataset(all, {0.98, 0.01, 0.01}, 1));
  CHECK_THROWS(split_dataset(all, {0.5, 0.3, 0.1}, 1));
  CHECK_THROWS(split_dataset(all, {1.0, 0.0, 0.0}, 1));
}

TEST_CASE("identity datasets share appearance across frames") {
  const DatasetHandle d = make_identity_dataset(777, 3, 5);
  CHECK(d.size() == 3);
  CHECK(d.records[0].id == "frame_00000");
  CHECK_FALSE(d.load_image(0) == d.load_image(1));
  CHECK(dataset_hash(d) == dataset_hash(make_identity_dataset(777, 3, 5)));
  CHECK(dataset_hash(d) != dataset_hash(make_identity_dataset(777, 3, 6)));
}
