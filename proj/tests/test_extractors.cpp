#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "lmbreak/archive.hpp"
#include "lmbreak/dataset.hpp"
#include "lmbreak/error.hpp"
#include "lmbreak/extractors.hpp"
#include "lmbreak/loss.hpp"
#include "lmbreak/metrics.hpp"
#include "lmbreak/nn/kernels.hpp"
#include "lmbreak/rng.hpp"

using namespace lmb;
namespace fs = std::filesystem;

namespace {

template <typename T>
nn::Tensor<T> random_tensor(int c, int h, int w, Rng& rng) {
  nn::Tensor<T> t(c, h, w);
  for (T& v : t.data) v = static_cast<T>(rng.normal());
  return t;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(rng.normal());
  return v;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Image noisy(const Image& img, double amp, std::uint64_t seed) {
  Image out = img;
  Rng rng(seed);
  for (double& v : out.values()) v = std::clamp(v + rng.uniform(-amp, amp), 0.0, 255.0);
  return out;
}

Image face(std::uint64_t seed) { return render_face(sample_face_params(seed)).image; }

}  // namespace

TEST_CASE("GEMM convolution matches the direct loops, forward and backward") {
  Rng rng(1);
  const nn::ConvShape shapes[] = {{3, 5, 3, 1, 1}, {4, 6, 3, 2, 1}, {5, 3, 1, 1, 0}, {2, 4, 3, 2, 1}};
  for (const auto& s : shapes)
    for (int size : {7, 8, 13}) {
      const auto in = random_tensor<double>(s.in_channels, size, size, rng);
      const auto w = random_vec<double>(static_cast<std::size_t>(s.weight_count()), rng);
      const auto b = random_vec<double>(static_cast<std::size_t>(s.out_channels), rng);
      const int o = s.out_extent(size);
      nn::Tensor<double> fast(s.out_channels, o, o), ref(s.out_channels, o, o);
      nn::conv2d_forward<double>(in, w, b, s, fast);
      nn::reference::conv2d_forward<double>(in, w, b, s, ref);
      CHECK(max_abs_diff(fast.data, ref.data) < 1e-10);

      const auto d_out = random_tensor<double>(s.out_channels, o, o, rng);
      nn::Tensor<double> di_f(s.in_channels, size, size), di_r(s.in_channels, size, size);
      std::vector<double> dw_f(w.size(), 0.5), dw_r(w.size(), 0.5), db_f(b.size(), 0.25), db_r(b.size(), 0.25);
      nn::conv2d_backward<double>(in, w, s, d_out, &di_f, dw_f, db_f);
      nn::reference::conv2d_backward<double>(in, w, s, d_out, &di_r, dw_r, db_r);
      CHECK(max_abs_diff(di_f.data, di_r.data) < 1e-10);
      CHECK(max_abs_diff(dw_f, dw_r) < 1e-10);
      CHECK(max_abs_diff(db_f, db_r) < 1e-10);
    }
}

TEST_CASE("backward gives bit-identical gradients regardless of buffer placement") {
  ExtractorSpec spec;
  spec.input = {32, 32};
  const auto g = build_graph(spec);
  const nn::Network<float> net(g, g->initial_parameters(2));
  Rng rng(4);
  const auto in = random_tensor<float>(3, 32, 32, rng);
  std::vector<float> first;
  std::vector<std::vector<float>> ballast;
  for (int run = 0; run < 6; ++run) {
    ballast.emplace_back(static_cast<std::size_t>(run) * 3 + 1);  // shifts later allocations
    nn::Workspace<float> ws;
    const auto& out = net.forward(in, ws);
    nn::Tensor<float> d(out.channels, out.height, out.width, 0.01f);
    std::vector<float> grad(g->parameter_count());
    net.backward(ws, d, grad, false);
    if (run == 0) first = grad;
    else CHECK(grad == first);
  }
}

TEST_CASE("direct convolution agrees with a hand-computed 3x3 example") {
  nn::Tensor<double> in(1, 3, 3);
  for (int i = 0; i < 9; ++i) in.data[i] = i + 1;  // 1..9
  std::vector<double> w(9, 1.0), b{0.5};
  nn::Tensor<double> out(1, 3, 3);
  nn::reference::conv2d_forward<double>(in, w, b, {1, 1, 3, 1, 1}, out);
  CHECK(out.at(0, 1, 1) == 45.5);
  CHECK(out.at(0, 0, 0) == 1 + 2 + 4 + 5 + 0.5);
  CHECK(out.at(0, 2, 2) == 5 + 6 + 8 + 9 + 0.5);
}

TEST_CASE("forward returns k maps at the stride-reduced size, deterministically") {
  for (Architecture a : all_architectures()) {
    ExtractorSpec spec;
    spec.architecture = a;
    const Extractor e = Extractor::initialize(spec, 3);
    const Image img = face(1);
    const HeatmapSet m = e.forward(img);
    CHECK(m.count == 13);
    CHECK(m.height == 32);
    CHECK(m.width == 32);
    CHECK(m.stride == 4);
    CHECK(e.forward(img).values == m.values);
    CHECK(e.forward(img, Precision::F64).values == e.forward(img, Precision::F64).values);
  }
}

TEST_CASE("forward rejects a wrongly sized image and names both shapes") {
  const Extractor e = Extractor::initialize({}, 1);
  try {
    e.forward(Image(64, 64, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("3x128x128") != std::string::npos);
    CHECK(msg.find("3x64x64") != std::string::npos);
  }
}

TEST_CASE("architectures differ in topology and parameter count") {
  std::set<std::string> prints;
  std::set<std::size_t> counts;
  for (Architecture a : all_architectures()) {
    ExtractorSpec spec;
    spec.architecture = a;
    const auto g = build_graph(spec);
    prints.insert(g->fingerprint());
    counts.insert(g->parameter_count());
    CHECK(parse_architecture(to_string(a)) == a);
  }
  CHECK(prints.size() == 3);
  CHECK(counts.size() == 3);
  ExtractorSpec bad;
  bad.stride = 8;
  CHECK_THROWS_AS(build_graph(bad), ShapeError);
  CHECK_THROWS(parse_architecture("resnet"));
}

TEST_CASE("decoding a rendered target at grid (10,20) returns (40,80) within half a stride") {
  LandmarkSet l{LandmarkSchema({"p"}), {{40.0, 80.0}}};
  const HeatmapTargets t = render_heatmap_targets(l, {32, 32}, 4, 1.5);
  const LandmarkSet d = decode_landmarks(t.maps, {128, 128}, l.schema);
  CHECK(std::abs(d[0].x - 40.0) <= 2.0);
  CHECK(std::abs(d[0].y - 80.0) <= 2.0);
}

TEST_CASE("constant maps decode to the origin") {
  HeatmapSet m(1, 32, 32, 4, 0.7);
  const LandmarkSet d = decode_landmarks(m, {128, 128}, LandmarkSchema({"p"}));
  CHECK(d[0] == Point{0.0, 0.0});
}

TEST_CASE("a strict maximum wins over a second peak") {
  HeatmapSet m(1, 32, 32, 4, 0.0);
  m.at(0, 5, 6) = 0.9;
  m.at(0, 25, 20) = 1.0;
  m.at(0, 25, 21) = 0.5;  // pulls a quarter cell to the right
  const LandmarkSet d = decode_landmarks(m, {128, 128}, LandmarkSchema({"p"}));
  CHECK(d[0].x == doctest::Approx(20.25 * 4));
  CHECK(d[0].y == doctest::Approx(25.0 * 4));
}

TEST_CASE("decode inverts target rendering to within stride/2 + 1 px") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const RenderedFace f = render_face(sample_face_params(rng.next()));
    const HeatmapTargets t = render_heatmap_targets(f.landmarks, {32, 32}, 4, 1.5);
    const LandmarkSet d = decode_landmarks(t.maps, {128, 128});
    for (std::size_t i = 0; i < 13; ++i) {
      REQUIRE(std::abs(d[i].x - f.landmarks[i].x) <= 3.0);
      REQUIRE(std::abs(d[i].y - f.landmarks[i].y) <= 3.0);
    }
  }
}

TEST_CASE("loss at the original image is k up to the stabiliser") {
  for (Architecture a : all_architectures()) {
    ExtractorSpec spec;
    spec.architecture = a;
    const Extractor e = Extractor::initialize(spec, 4);
    const Image img = face(2);
    const InputGradient g = e.input_gradient(img, e.forward(img));
    CHECK(g.loss == doctest::Approx(13.0).epsilon(1e-6));
    CHECK(g.grad.same_shape(img));
    const HeatmapSet m64 = e.forward(img, Precision::F64);
    const InputGradient g64 = e.input_gradient(img, m64, Precision::F64);
    double expect = 0.0;
    for (int i = 0; i < m64.count; ++i) {
      double n2 = 0.0;
      for (double v : m64.map(i)) n2 += v * v;
      expect += n2 / (n2 + kCosineDelta);
    }
    CHECK(g64.loss == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("float64 input gradient matches central differences") {
  for (Architecture a : all_architectures()) {
    ExtractorSpec spec;
    spec.architecture = a;
    const Extractor e = Extractor::initialize(spec, 5);
    const Image orig = face(3);
    const HeatmapSet ref = e.forward(orig, Precision::F64);
    const Image at = noisy(orig, 12.0, 9);  // away from the stationary point at orig
    const InputGradient g = e.input_gradient(at, ref, Precision::F64);
    Rng rng(11);
    for (int k = 0; k < 10; ++k) {
      Image plus = at, minus = at;
      const std::size_t idx = rng.below(at.pixel_count());
      const double h = 1e-3;
      plus.values()[idx] += h;
      minus.values()[idx] -= h;
      const double fd = (heatmap_cosine_loss(e.forward(plus, Precision::F64), ref) -
                         heatmap_cosine_loss(e.forward(minus, Precision::F64), ref)) / (2 * h);
      const double an = g.grad.values()[idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-9});
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("float32 and float64 gradients agree away from the stationary point") {
  const Extractor e = Extractor::initialize({}, 6);
  const Image orig = face(4);
  const Image at = noisy(orig, 12.0, 3);
  const InputGradient g32 = e.input_gradient(at, e.forward(orig));
  const InputGradient g64 = e.input_gradient(at, e.forward(orig, Precision::F64), Precision::F64);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < at.pixel_count(); ++i) {
    num += std::pow(g32.grad.values()[i] - g64.grad.values()[i], 2);
    den += std::pow(g64.grad.values()[i], 2);
  }
  CHECK(std::sqrt(num / den) < 1e-3);
}

TEST_CASE("checkpoints round-trip exactly and carry a type tag") {
  const fs::path p = fs::temp_directory_path() / ("lmb_ckpt_" + std::to_string(::getpid()) + ".ckpt");
  ExtractorSpec spec;
  spec.architecture = Architecture::HiresParallelMini;
  TrainingMetadata meta;
  meta.dataset_hash = "abc";
  meta.epochs = 3;
  meta.val_nme = {0.5, 0.2};
  const Extractor e(spec, build_graph(spec)->initial_parameters(9), meta);
  e.save(p);
  const Extractor back = Extractor::load(p);
  CHECK(std::equal(e.weights().begin(), e.weights().end(), back.weights().begin(), back.weights().end()));
  CHECK(back.spec().architecture == spec.architecture);
  CHECK(back.metadata().val_nme == meta.val_nme);
  const fs::path p2 = p.string() + "2";
  back.save(p2);
  CHECK(read_archive(p2).weights == read_archive(p).weights);
  CHECK_THROWS_AS(read_archive(p, "synthesizer"), DataError);
  fs::remove(p);
  fs::remove(p2);
}

TEST_CASE("training: zero epochs keeps the initial weights, repeat runs agree, loss falls") {
  const DatasetHandle all = make_synthetic_dataset(80, 12);
  const auto s = split_dataset(all, {0.8, 0.1, 0.1}, 3);
  ExtractorSpec spec;
  spec.architecture = Architecture::EncDecMini;
  TrainingOptions o;
  o.epochs = 0;
  const Extractor zero = train_extractor(spec, s[0], s[1], o);
  const Extractor init = Extractor::initialize(spec, o.seed);
  CHECK(std::equal(zero.weights().begin(), zero.weights().end(), init.weights().begin(), init.weights().end()));
  REQUIRE(zero.metadata().val_nme.size() == 1);
  CHECK(zero.metadata().final_val_nme == doctest::Approx(evaluate_extractor(init, s[1])));

  o.epochs = 3;
  o.batch_size = 8;
  const Extractor a = train_extractor(spec, s[0], s[1], o);
  const Extractor b = train_extractor(spec, s[0], s[1], o);
  CHECK(std::equal(a.weights().begin(), a.weights().end(), b.weights().begin(), b.weights().end()));
  REQUIRE(a.metadata().train_loss.size() == 3);
  CHECK(a.metadata().train_loss[2] < a.metadata().train_loss[0]);
  CHECK(a.metadata().dataset_hash == dataset_hash(s[0]));
}

TEST_CASE("training with an absurd learning rate reports divergence") {
  const DatasetHandle all = make_synthetic_dataset(40, 13);
  const auto s = split_dataset(all, {0.8, 0.1, 0.1}, 3);
  TrainingOptions o;
  o.epochs = 3;
  o.learning_rate = 1e30;
  try {
    train_extractor({}, s[0], s[1], o);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("evaluate_extractor: own predictions score zero, means are plain averages") {
  const Extractor e = Extractor::initialize({}, 7);
  DatasetHandle d = make_synthetic_dataset(5, 30);
  std::vector<double> per;
  for (std::size_t i = 0; i < d.size(); ++i)
    per.push_back(nme(predict_landmarks(e, d.load_image(i), d.schema), d.records[i].landmarks));
  CHECK(evaluate_extractor(e, d) == doctest::Approx((per[0] + per[1] + per[2] + per[3] + per[4]) / 5));

  DatasetHandle one = d;
  one.records.resize(1);
  CHECK(evaluate_extractor(e, one) == doctest::Approx(per[0]));

  // ground truth replaced by the extractor's own decode scores exactly zero
  std::size_t used = 0;
  DatasetHandle own = d;
  own.records.clear();
  for (std::size_t i = 0; i < d.size(); ++i) {
    DatasetRecord r = d.records[i];
    r.landmarks = predict_landmarks(e, d.load_image(i), d.schema);
    if (r.landmarks[face13::kLeftEyeOuter] == r.landmarks[face13::kRightEyeOuter]) continue;
    own.records.push_back(r);
    ++used;
  }
  if (used > 0) CHECK(evaluate_extractor(e, own) == 0.0);

  DatasetHandle empty = d;
  empty.records.clear();
  CHECK_THROWS(evaluate_extractor(e, empty));
}
