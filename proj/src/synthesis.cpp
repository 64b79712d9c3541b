#include "lmbreak/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lmbreak/archive.hpp"
#include "lmbreak/error.hpp"
#include "lmbreak/faces.hpp"
#include "lmbreak/metrics.hpp"
#include "lmbreak/nn/adam.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

Point SimilarityTransform::apply(Point p) const {
  const double a = scale * std::cos(theta), b = scale * std::sin(theta);
  return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
  if (!(scale > 0.0)) throw NumericError("similarity transform with non-positive scale");
  SimilarityTransform inv{1.0 / scale, -theta, 0.0, 0.0};
  const Point t = inv.apply({-tx, -ty});
  inv.tx = t.x;
  inv.ty = t.y;
  return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  SimilarityTransform out{scale * other.scale, theta + other.theta, 0.0, 0.0};
  const Point t = apply({other.tx, other.ty});
  out.tx = t.x;
  out.ty = t.y;
  return out;
}

LandmarkSet canonical_template(std::size_t k, int crop_size) {
  if (k != static_cast<std::size_t>(face13::kCount))
    throw ShapeError("canonical template exists for the 13-point schema only, got k=" + std::to_string(k));
  if (crop_size < 16) throw ShapeError("crop size must be at least 16");
  // the default face parameters are the mean of the generator's ranges on a 128 canvas
  const FaceParams mean;
  LandmarkSet set = face_landmarks(mean);
  const double s = crop_size / 128.0;
  for (Point& p : set.coords) p = {(p.x - mean.center_x) * s + crop_size / 2.0, (p.y - mean.center_y) * s + crop_size / 2.0};
  return set;
}

SimilarityTransform similarity_transform(const LandmarkSet& src, const LandmarkSet& dst) {
  if (src.schema != dst.schema || src.size() != dst.size()) throw ShapeError("similarity_transform: schema mismatch");
  const double n = static_cast<double>(src.size());
  Point ms, md;
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms.x += src[i].x / n;
    ms.y += src[i].y / n;
    md.x += dst[i].x / n;
    md.y += dst[i].y / n;
  }
  double ss = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double xs = src[i].x - ms.x, ys = src[i].y - ms.y;
    const double xd = dst[i].x - md.x, yd = dst[i].y - md.y;
    ss += xs * xs + ys * ys;
    sa += xs * xd + ys * yd;
    sb += xs * yd - ys * xd;
  }
  if (!(ss > 1e-12)) throw DataError("similarity_transform: source landmarks coincide");
  const double a = sa / ss, b = sb / ss;
  SimilarityTransform t{std::hypot(a, b), std::atan2(b, a), 0.0, 0.0};
  if (!(t.scale > 0.0)) throw DataError("similarity_transform: degenerate fit (zero scale)");
  const Point rm = t.apply(ms);
  t.tx = md.x - rm.x;
  t.ty = md.y - rm.y;
  return t;
}

Image warp_crop(const Image& image, const SimilarityTransform& transform, int crop_size) {
  if (crop_size <= 0) throw ShapeError("crop size must be positive");
  const SimilarityTransform inv = transform.inverse();
  Image out(crop_size, crop_size, image.channels());
  for (int y = 0; y < crop_size; ++y)
    for (int x = 0; x < crop_size; ++x) {
      const Point p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx0 = std::floor(p.x), fy0 = std::floor(p.y);
      if (!(std::abs(fx0) < 1e9 && std::abs(fy0) < 1e9)) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const double fx = p.x - fx0, fy = p.y - fy0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ty[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int c = 0; c < image.channels(); ++c) {
        double v = 0.0;
        for (int j = 0; j < 4; ++j)
          if (w[j] != 0.0 && tx[j] >= 0 && ty[j] >= 0 && tx[j] < image.width() && ty[j] < image.height())
            v += w[j] * image.at(c, ty[j], tx[j]);
        out.at(c, y, x) = v;
      }
    }
  return out;
}

Image align_face(const Image& image, const LandmarkSet& landmarks, int crop_size) {
  const LandmarkSet tmpl = canonical_template(landmarks.size(), crop_size);
  return warp_crop(image, similarity_transform(landmarks, tmpl), crop_size);
}

namespace {

nn::Tensor<float> to_tensor(const Image& image) {
  nn::Tensor<float> t(image.channels(), image.height(), image.width());
  auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i] / 255.0);
  return t;
}

double mse_pixels(const Image& a, const Image& b) {
  auto av = a.values(), bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return s / static_cast<double>(av.size());
}

}  // namespace

std::shared_ptr<const nn::Graph> Synthesizer::build_graph(int crop_size) {
  if (crop_size < 16 || crop_size % 4 != 0) throw ShapeError("synthesizer crop size must be a multiple of 4, >= 16");
  auto g = std::make_shared<nn::Graph>(3);
  int x = g->conv_act(0, 24, 3, 2);
  x = g->conv_act(x, 48, 3, 2);
  x = g->conv_act(x, 48);
  x = g->conv_act(x, 24, 1);  // bottleneck at 1/4 resolution
  x = g->conv_act(x, 48);
  x = g->conv_act(g->upsample(x, 2), 32);
  x = g->conv_act(g->upsample(x, 2), 24);
  g->conv(x, 3, 3);
  return g;
}

Synthesizer::Synthesizer(int crop_size, std::vector<float> weights, SynthMetadata metadata)
    : crop_size_(crop_size), weights_(std::move(weights)), metadata_(std::move(metadata)) {
  auto g = build_graph(crop_size);
  if (weights_.size() != g->parameter_count())
    throw DataError("synthesizer weight count " + std::to_string(weights_.size()) + " does not match " +
                    std::to_string(g->parameter_count()));
  net_ = std::make_shared<nn::Network<float>>(g, weights_);
}

Image Synthesizer::reconstruct(const Image& crop) const {
  if (crop.height() != crop_size_ || crop.width() != crop_size_ || crop.channels() != 3)
    throw ShapeError("synthesizer expects a " + std::to_string(crop_size_) + "x" + std::to_string(crop_size_) +
                     " RGB crop");
  nn::Workspace<float> ws;
  const auto& out = net_->forward(to_tensor(crop), ws);
  Image img(crop_size_, crop_size_, 3);
  auto v = img.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(static_cast<double>(out.data[i]) * 255.0, 0.0, 255.0);
  return img;
}

void Synthesizer::save(const std::filesystem::path& path) const {
  Archive a;
  a.header = {{"version", kArchiveVersion},
              {"type", "synthesizer"},
              {"crop_size", crop_size_},
              {"topology", build_graph(crop_size_)->fingerprint()},
              {"metadata",
               {{"epochs", metadata_.epochs},
                {"seed", metadata_.seed},
                {"train_count", metadata_.train_count},
                {"val_count", metadata_.val_count},
                {"baseline_val_mse", metadata_.baseline_val_mse},
                {"val_mse", metadata_.val_mse},
                {"val_ssim", metadata_.val_ssim},
                {"train_mse", metadata_.train_mse}}}};
  a.weights = weights_;
  write_archive(path, a);
}

Synthesizer Synthesizer::load(const std::filesystem::path& path) {
  Archive a = read_archive(path, "synthesizer");
  try {
    const auto& m = a.header.at("metadata");
    SynthMetadata meta;
    meta.epochs = m.at("epochs").get<int>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.train_count = m.at("train_count").get<std::size_t>();
    meta.val_count = m.at("val_count").get<std::size_t>();
    meta.baseline_val_mse = m.at("baseline_val_mse").get<double>();
    meta.val_mse = m.at("val_mse").get<double>();
    meta.val_ssim = m.at("val_ssim").get<double>();
    meta.train_mse = m.at("train_mse").get<std::vector<double>>();
    return Synthesizer(a.header.at("crop_size").get<int>(), std::move(a.weights), std::move(meta));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed synthesizer header in " + path.string() + ": " + e.what());
  }
}

Synthesizer train_synthesizer(const std::vector<Image>& crops, const SynthTrainingOptions& options) {
  if (crops.size() < 200) throw DataError("train_synthesizer needs at least 200 crops, got " + std::to_string(crops.size()));
  const int size = crops.front().height();
  for (const Image& c : crops)
    if (c.height() != size || c.width() != size || c.channels() != 3)
      throw DataError("train_synthesizer: crops must be uniform square RGB");
  if (!(options.val_fraction > 0.0 && options.val_fraction < 1.0)) throw Error("val_fraction must be in (0,1)");
  if (options.batch_size <= 0 || options.epochs < 0) throw Error("invalid synthesizer training options");

  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(crops.size() * options.val_fraction)));
  const std::size_t n_train = crops.size() - n_val;
  auto graph = Synthesizer::build_graph(size);
  nn::Network<float> net(graph, graph->initial_parameters(mix_seed(options.seed, 0x5e7)));

  std::vector<nn::Tensor<float>> inputs;
  inputs.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) inputs.push_back(to_tensor(crops[i]));

  auto evaluate = [&](SynthMetadata& meta) {
    Synthesizer s(size, std::vector<float>(net.parameters().begin(), net.parameters().end()));
    double m = 0.0, q = 0.0;
    for (std::size_t i = n_train; i < crops.size(); ++i) {
      const Image r = s.reconstruct(crops[i]);
      m += mse_pixels(r, crops[i]);
      q += ssim(r, crops[i]);
    }
    meta.val_mse = m / static_cast<double>(n_val);
    meta.val_ssim = q / static_cast<double>(n_val);
  };

  SynthMetadata meta;
  meta.epochs = options.epochs;
  meta.seed = options.seed;
  meta.train_count = n_train;
  meta.val_count = n_val;
  evaluate(meta);
  meta.baseline_val_mse = meta.val_mse;

  nn::Adam adam(graph->parameter_count());
  std::vector<float> grad(graph->parameter_count());
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(options.seed, 0x5e8));
  nn::Workspace<float> ws;
  const std::size_t batch = static_cast<std::size_t>(options.batch_size);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const double lr =
        options.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - 1) / std::max(1, options.epochs)));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t b = start; b < end; ++b) {
        const nn::Tensor<float>& in = inputs[order[b]];
        const auto& out = net.forward(in, ws);
        nn::Tensor<float> d(out.channels, out.height, out.width);
        const float scale = 2.0f / static_cast<float>(out.size());
        double loss = 0.0;
        for (std::size_t j = 0; j < out.size(); ++j) {
          const float diff = out.data[j] - in.data[j];
          loss += static_cast<double>(diff) * diff;
          d.data[j] = scale * diff;
        }
        epoch_loss += loss / static_cast<double>(out.size());
        net.backward(ws, d, grad, false);
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      for (float& g : grad) g *= inv;
      adam.update(net.parameters(), grad, lr);
    }
    epoch_loss = epoch_loss / static_cast<double>(n_train) * 255.0 * 255.0;
    if (!std::isfinite(epoch_loss))
      throw NumericError("synthesizer training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    meta.train_mse.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  evaluate(meta);
  return Synthesizer(size, std::vector<float>(net.parameters().begin(), net.parameters().end()), std::move(meta));
}

std::vector<Image> aligned_crops(const DatasetHandle& data, int crop_size) {
  std::vector<Image> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back(align_face(data.load_image(i), data.records[i].landmarks, crop_size));
  return out;
}

double ssim_w_pipeline(const Image& image, const LandmarkSet& clean_landmarks, const LandmarkSet& attacked_landmarks,
                       const Synthesizer& synth) {
  const int size = synth.crop_size();
  const Image clean = synth.reconstruct(align_face(image, clean_landmarks, size));
  const Image attacked = synth.reconstruct(align_face(image, attacked_landmarks, size));
  return ssim(clean, attacked);
}

}  // namespace lmb
