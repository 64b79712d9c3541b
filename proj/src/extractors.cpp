#include "lmbreak/extractors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lmbreak/archive.hpp"
#include "lmbreak/error.hpp"
#include "lmbreak/loss.hpp"
#include "lmbreak/metrics.hpp"
#include "lmbreak/nn/adam.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::HourglassMini: return "hourglass-mini";
    case Architecture::HiresParallelMini: return "hires-parallel-mini";
    case Architecture::EncDecMini: return "encdec-mini";
  }
  return "?";
}

Architecture parse_architecture(const std::string& id) {
  for (Architecture a : all_architectures())
    if (to_string(a) == id) return a;
  throw Error("unknown architecture '" + id + "'");
}

const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> archs{Architecture::HourglassMini, Architecture::HiresParallelMini,
                                               Architecture::EncDecMini};
  return archs;
}

namespace {

// One encoder-decoder with a skip connection at every scale.
void build_hourglass(nn::Graph& g, int k) {
  const int s1 = g.conv_act(0, 12, 3, 2);      // 1/2
  const int s2 = g.conv_act(s1, 16, 3, 2);     // 1/4
  const int skip4 = g.conv_act(s2, 16);
  const int d8 = g.conv_act(skip4, 24, 3, 2);  // 1/8
  const int skip8 = g.conv_act(d8, 24);
  const int d16 = g.conv_act(skip8, 32, 3, 2);  // 1/16
  const int b16 = g.conv_act(g.conv_act(d16, 32), 32);
  const int u8 = g.silu(g.add(g.conv(g.upsample(b16, 2), 24, 3, 1, 0.7071067811865476), skip8));
  const int r8 = g.conv_act(u8, 24);
  const int u4 = g.silu(g.add(g.conv(g.upsample(r8, 2), 16, 3, 1, 0.7071067811865476), skip4));
  const int r4 = g.conv_act(u4, 16);
  g.conv(r4, k, 1);
}

// A 1/4 branch and a 1/8 branch, exchanging information after every stage.
void build_hires(nn::Graph& g, int k) {
  constexpr double kFuse = 0.7071067811865476;
  const int s1 = g.conv_act(0, 12, 3, 2);
  const int s2 = g.conv_act(s1, 16, 3, 2);
  int high = g.conv_act(s2, 16);
  int low = g.conv_act(g.conv_act(high, 32, 3, 2), 32);
  for (int stage = 0; stage < 3; ++stage) {
    const int h = g.conv(high, 16, 3, 1, kFuse);
    const int l = g.conv(low, 32, 3, 1, kFuse);
    const int low_to_high = g.upsample(g.conv(low, 16, 1, 1, kFuse), 2);
    const int high_to_low = g.conv(high, 32, 3, 2, kFuse);
    high = g.silu(g.add(h, low_to_high));
    low = g.silu(g.add(l, high_to_low));
  }
  const int fused = g.silu(g.add(g.conv(high, 16, 3, 1, kFuse), g.upsample(g.conv(low, 16, 1, 1, kFuse), 2)));
  g.conv(fused, k, 1);
}

// Strided encoder, upsampling decoder, no skips.
void build_encdec(nn::Graph& g, int k) {
  int x = g.conv_act(0, 16, 3, 2);
  x = g.conv_act(x, 24, 3, 2);
  x = g.conv_act(x, 32, 3, 2);
  x = g.conv_act(x, 32);
  x = g.conv_act(x, 32);
  x = g.conv_act(x, 48, 3, 2);
  x = g.conv_act(x, 48);
  x = g.conv_act(g.upsample(x, 2), 32);
  x = g.conv_act(g.upsample(x, 2), 24);
  x = g.conv_act(x, 24);
  g.conv(x, k, 1);
}

template <typename T>
nn::Tensor<T> to_input(const Image& image) {
  nn::Tensor<T> t(image.channels(), image.height(), image.width());
  auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<T>(v[i] / 255.0);
  return t;
}

template <typename T>
HeatmapSet to_maps(const nn::Tensor<T>& t, int stride) {
  HeatmapSet m(t.channels, t.height, t.width, stride);
  for (std::size_t i = 0; i < t.size(); ++i) m.values[i] = static_cast<double>(t.data[i]);
  return m;
}

template <typename T>
nn::Tensor<T> from_maps(const HeatmapSet& m) {
  nn::Tensor<T> t(m.count, m.height, m.width);
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<T>(m.values[i]);
  return t;
}

template <typename T>
Image to_pixel_grad(const nn::Tensor<T>& t) {
  Image g(t.height, t.width, t.channels);
  auto v = g.values();
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t.data[i]) / 255.0;
  return g;
}

template <typename T>
std::pair<HeatmapSet, Image> run_vjp(const nn::Network<T>& net, const Image& image, int stride,
                                     const std::function<HeatmapSet(const HeatmapSet&)>& upstream) {
  nn::Workspace<T> ws;
  const auto& out = net.forward(to_input<T>(image), ws);
  HeatmapSet maps = to_maps(out, stride);
  const HeatmapSet d_maps = upstream(maps);
  if (!d_maps.same_shape(maps)) throw ShapeError("upstream gradient shape does not match heat-maps");
  nn::Tensor<T> grad = net.backward(ws, from_maps<T>(d_maps), {}, true);
  return {std::move(maps), to_pixel_grad(grad)};
}

}  // namespace

std::shared_ptr<const nn::Graph> build_graph(const ExtractorSpec& spec) {
  if (spec.stride != 4) throw ShapeError("mini extractors produce stride-4 heat-maps; got stride " + std::to_string(spec.stride));
  if (spec.input.height % 16 != 0 || spec.input.width % 16 != 0)
    throw ShapeError("extractor input size must be a multiple of 16");
  if (spec.landmark_count <= 0) throw ShapeError("landmark count must be positive");
  auto g = std::make_shared<nn::Graph>(3);
  switch (spec.architecture) {
    case Architecture::HourglassMini: build_hourglass(*g, spec.landmark_count); break;
    case Architecture::HiresParallelMini: build_hires(*g, spec.landmark_count); break;
    case Architecture::EncDecMini: build_encdec(*g, spec.landmark_count); break;
  }
  return g;
}

Extractor::Extractor(ExtractorSpec spec, std::vector<float> weights, TrainingMetadata metadata)
    : spec_(spec), graph_(build_graph(spec)), weights_(std::move(weights)), metadata_(std::move(metadata)) {
  spec_.parameter_count = graph_->parameter_count();
  if (weights_.size() != graph_->parameter_count())
    throw DataError("weight count " + std::to_string(weights_.size()) + " does not match " + id() + " (" +
                    std::to_string(graph_->parameter_count()) + ")");
  net32_ = std::make_shared<nn::Network<float>>(graph_, weights_);
  net64_ = std::make_shared<nn::Network<double>>(graph_, std::vector<double>(weights_.begin(), weights_.end()));
}

Extractor Extractor::initialize(ExtractorSpec spec, std::uint64_t seed) {
  auto g = build_graph(spec);
  return Extractor(spec, g->initial_parameters(mix_seed(seed, static_cast<std::uint64_t>(spec.architecture))));
}

void Extractor::save(const std::filesystem::path& path) const {
  Archive a;
  a.header = {{"version", kArchiveVersion},
              {"type", "extractor"},
              {"spec",
               {{"architecture", id()},
                {"landmark_count", spec_.landmark_count},
                {"input_height", spec_.input.height},
                {"input_width", spec_.input.width},
                {"stride", spec_.stride},
                {"parameter_count", spec_.parameter_count}}},
              {"topology", graph_->fingerprint()},
              {"metadata",
               {{"dataset_hash", metadata_.dataset_hash},
                {"epochs", metadata_.epochs},
                {"best_epoch", metadata_.best_epoch},
                {"final_val_nme", metadata_.final_val_nme},
                {"seed", metadata_.seed},
                {"train_loss", metadata_.train_loss},
                {"val_nme", metadata_.val_nme}}}};
  a.weights = weights_;
  write_archive(path, a);
}

Extractor Extractor::load(const std::filesystem::path& path) {
  Archive a = read_archive(path, "extractor");
  try {
    const auto& s = a.header.at("spec");
    ExtractorSpec spec;
    spec.architecture = parse_architecture(s.at("architecture").get<std::string>());
    spec.landmark_count = s.at("landmark_count").get<int>();
    spec.input = {s.at("input_height").get<int>(), s.at("input_width").get<int>()};
    spec.stride = s.at("stride").get<int>();
    const auto& m = a.header.at("metadata");
    TrainingMetadata meta;
    meta.dataset_hash = m.at("dataset_hash").get<std::string>();
    meta.epochs = m.at("epochs").get<int>();
    meta.best_epoch = m.at("best_epoch").get<int>();
    meta.final_val_nme = m.at("final_val_nme").get<double>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.train_loss = m.at("train_loss").get<std::vector<double>>();
    meta.val_nme = m.at("val_nme").get<std::vector<double>>();
    return Extractor(spec, std::move(a.weights), std::move(meta));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed extractor header in " + path.string() + ": " + e.what());
  }
}

void Extractor::check_input(const Image& image) const {
  if (image.height() != spec_.input.height || image.width() != spec_.input.width || image.channels() != 3)
    throw ShapeError("extractor " + id() + " expects 3x" + std::to_string(spec_.input.height) + "x" +
                     std::to_string(spec_.input.width) + " input, got " + std::to_string(image.channels()) + "x" +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

HeatmapSet Extractor::forward(const Image& image, Precision precision) const {
  check_input(image);
  if (precision == Precision::F64) {
    nn::Workspace<double> ws;
    return to_maps(net64_->forward(to_input<double>(image), ws), spec_.stride);
  }
  nn::Workspace<float> ws;
  return to_maps(net32_->forward(to_input<float>(image), ws), spec_.stride);
}

std::pair<HeatmapSet, Image> Extractor::vector_jacobian(const Image& image,
                                                        const std::function<HeatmapSet(const HeatmapSet&)>& upstream,
                                                        Precision precision) const {
  check_input(image);
  if (precision == Precision::F64) return run_vjp(*net64_, image, spec_.stride, upstream);
  return run_vjp(*net32_, image, spec_.stride, upstream);
}

InputGradient Extractor::input_gradient(const Image& image, const HeatmapSet& ref_maps, Precision precision) const {
  double loss = 0.0;
  auto [maps, grad] = vector_jacobian(
      image,
      [&](const HeatmapSet& pred) {
        LossWithGradient lg = precision == Precision::F64 ? heatmap_cosine_loss_grad(pred, ref_maps)
                                                          : heatmap_cosine_loss_grad_f32(pred, ref_maps);
        loss = lg.loss;
        return std::move(lg.d_pred);
      },
      precision);
  for (double g : grad.values())
    if (!std::isfinite(g)) throw NumericError("input gradient of " + id() + " is not finite");
  return {loss, std::move(grad)};
}

LandmarkSet decode_landmarks(const HeatmapSet& maps, ImageSize image_size, const LandmarkSchema& schema) {
  if (maps.count == 0 || maps.height == 0 || maps.width == 0) throw ShapeError("decode_landmarks: empty heat-maps");
  if (schema.size() != static_cast<std::size_t>(maps.count))
    throw ShapeError("decode_landmarks: " + std::to_string(maps.count) + " maps for a " +
                     std::to_string(schema.size()) + "-point schema");
  LandmarkSet out{schema, {}};
  out.coords.reserve(static_cast<std::size_t>(maps.count));
  for (int i = 0; i < maps.count; ++i) {
    auto m = maps.map(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.size(); ++j)
      if (m[j] > m[best]) best = j;
    const int by = static_cast<int>(best / static_cast<std::size_t>(maps.width));
    const int bx = static_cast<int>(best % static_cast<std::size_t>(maps.width));
    double x = bx, y = by;
    if (bx > 0 && bx < maps.width - 1) {
      const double l = maps.at(i, by, bx - 1), r = maps.at(i, by, bx + 1);
      if (r > l) x += 0.25;
      else if (l > r) x -= 0.25;
    }
    if (by > 0 && by < maps.height - 1) {
      const double u = maps.at(i, by - 1, bx), d = maps.at(i, by + 1, bx);
      if (d > u) y += 0.25;
      else if (u > d) y -= 0.25;
    }
    x = std::clamp(x * maps.stride, 0.0, static_cast<double>(image_size.width - 1));
    y = std::clamp(y * maps.stride, 0.0, static_cast<double>(image_size.height - 1));
    out.coords.push_back({x, y});
  }
  return out;
}

LandmarkSet predict_landmarks(const Extractor& extractor, const Image& image, const LandmarkSchema& schema) {
  return decode_landmarks(extractor.forward(image), image.size(), schema);
}

double evaluate_extractor(const Extractor& extractor, const DatasetHandle& data) {
  if (data.empty()) throw DataError("evaluate_extractor: empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += nme(predict_landmarks(extractor, data.load_image(i), data.schema), data.records[i].landmarks);
  return sum / static_cast<double>(data.size());
}

namespace {

struct CachedSample {
  nn::Tensor<float> input;
  nn::Tensor<float> target;
};

}  // namespace

Extractor train_extractor(const ExtractorSpec& spec, const DatasetHandle& train, const DatasetHandle& val,
                          const TrainingOptions& options) {
  if (train.schema.size() != static_cast<std::size_t>(spec.landmark_count) ||
      val.schema.size() != static_cast<std::size_t>(spec.landmark_count))
    throw DataError("dataset schema size does not match extractor landmark count");
  if (train.empty() || val.empty()) throw DataError("train_extractor: empty train or val split");
  if (options.batch_size <= 0) throw Error("batch size must be positive");

  Extractor init = Extractor::initialize(spec, options.seed);
  auto graph = build_graph(spec);
  nn::Network<float> net(graph, std::vector<float>(init.weights().begin(), init.weights().end()));

  std::vector<CachedSample> samples;
  samples.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Image img = train.load_image(i);
    if (img.height() != spec.input.height || img.width() != spec.input.width)
      throw ShapeError("training image size does not match extractor input");
    HeatmapTargets t = render_heatmap_targets(train.records[i].landmarks, spec.map_size(), spec.stride, options.sigma);
    samples.push_back({to_input<float>(img), from_maps<float>(t.maps)});
  }
  std::vector<Image> val_images;
  for (std::size_t i = 0; i < val.size(); ++i) val_images.push_back(val.load_image(i));

  auto val_nme = [&](std::span<const float> weights) {
    Extractor e(spec, std::vector<float>(weights.begin(), weights.end()));
    double s = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i)
      s += nme(predict_landmarks(e, val_images[i], val.schema), val.records[i].landmarks);
    return s / static_cast<double>(val.size());
  };

  TrainingMetadata meta;
  meta.dataset_hash = dataset_hash(train);
  meta.seed = options.seed;
  meta.epochs = options.epochs;
  std::vector<float> best(net.parameters().begin(), net.parameters().end());
  double best_nme = val_nme(best);
  meta.val_nme.push_back(best_nme);

  nn::Adam adam(graph->parameter_count());
  std::vector<float> grad(graph->parameter_count());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(options.seed, 0x7a1));
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
        const CachedSample& s = samples[order[b]];
        const auto& out = net.forward(s.input, ws);
        nn::Tensor<float> d(out.channels, out.height, out.width);
        const float scale = 2.0f / static_cast<float>(out.size());
        double loss = 0.0;
        for (std::size_t j = 0; j < out.size(); ++j) {
          const float diff = out.data[j] - s.target.data[j];
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
    epoch_loss /= static_cast<double>(samples.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    const double v = val_nme(net.parameters());
    meta.train_loss.push_back(epoch_loss);
    meta.val_nme.push_back(v);
    if (v < best_nme) {
      best_nme = v;
      meta.best_epoch = epoch;
      best.assign(net.parameters().begin(), net.parameters().end());
    }
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss, v);
  }
  meta.final_val_nme = best_nme;
  return Extractor(spec, std::move(best), std::move(meta));
}

}  // namespace lmb
