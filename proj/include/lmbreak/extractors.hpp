#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lmbreak/dataset.hpp"
#include "lmbreak/heatmap.hpp"
#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"
#include "lmbreak/nn/network.hpp"

namespace lmb {

enum class Architecture { HourglassMini, HiresParallelMini, EncDecMini };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& id);
const std::vector<Architecture>& all_architectures();

struct ExtractorSpec {
  Architecture architecture = Architecture::HourglassMini;
  int landmark_count = 13;
  ImageSize input{128, 128};
  int stride = 4;
  std::size_t parameter_count = 0;  // informational, filled by build_graph

  ImageSize map_size() const { return {input.height / stride, input.width / stride}; }
};

/// Layer graph for a spec. Throws ShapeError when the stride does not divide the
/// input size or the architecture's own downsampling does not match it.
std::shared_ptr<const nn::Graph> build_graph(const ExtractorSpec& spec);

struct TrainingMetadata {
  std::string dataset_hash;
  int epochs = 0;
  int best_epoch = 0;
  double final_val_nme = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_nme;     // index 0 = before training
};

enum class Precision { F32, F64 };

struct InputGradient {
  double loss = 0.0;
  Image grad;  // dL/dpixel, pixel units, same shape as the image
};

/// A trained (or initialised) heat-map landmark extractor. Immutable once
/// constructed; all inference entry points are safe to call concurrently.
class Extractor {
 public:
  Extractor(ExtractorSpec spec, std::vector<float> weights, TrainingMetadata metadata = {});

  static Extractor initialize(ExtractorSpec spec, std::uint64_t seed);
  static Extractor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const ExtractorSpec& spec() const { return spec_; }
  const nn::Graph& graph() const { return *graph_; }
  std::span<const float> weights() const { return weights_; }
  const TrainingMetadata& metadata() const { return metadata_; }
  std::string id() const { return to_string(spec_.architecture); }

  /// Raw final-layer heat-maps.
  HeatmapSet forward(const Image& image, Precision precision = Precision::F32) const;

  /// Cosine loss against ref_maps and its exact derivative w.r.t. input pixels.
  InputGradient input_gradient(const Image& image, const HeatmapSet& ref_maps,
                               Precision precision = Precision::F32) const;

  /// Backpropagates an arbitrary heat-map gradient to pixel space.
  /// Returns (maps at `image`, dL/dpixel).
  std::pair<HeatmapSet, Image> vector_jacobian(const Image& image,
                                               const std::function<HeatmapSet(const HeatmapSet&)>& upstream,
                                               Precision precision = Precision::F32) const;

 private:
  void check_input(const Image& image) const;

  ExtractorSpec spec_;
  std::shared_ptr<const nn::Graph> graph_;
  std::vector<float> weights_;
  TrainingMetadata metadata_;
  std::shared_ptr<const nn::Network<float>> net32_;
  std::shared_ptr<const nn::Network<double>> net64_;
};

/// First row-major argmax per map, quarter-pixel step toward the larger axis
/// neighbour, multiplied by the stride.
LandmarkSet decode_landmarks(const HeatmapSet& maps, ImageSize image_size,
                             const LandmarkSchema& schema = LandmarkSchema::face13());

struct TrainingOptions {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double sigma = 1.5;
  std::uint64_t seed = 1;
  /// Called after each epoch with (epoch, train loss, val NME).
  std::function<void(int, double, double)> on_epoch;
};

/// Heat-map MSE with Adam; keeps the weights with the best validation NME.
/// Throws NumericError naming the epoch when the loss diverges.
Extractor train_extractor(const ExtractorSpec& spec, const DatasetHandle& train, const DatasetHandle& val,
                          const TrainingOptions& options);

/// Mean NME of decoded predictions against the dataset's ground truth.
double evaluate_extractor(const Extractor& extractor, const DatasetHandle& data);

/// Per-record decoded landmarks (helper shared by evaluation paths).
LandmarkSet predict_landmarks(const Extractor& extractor, const Image& image, const LandmarkSchema& schema);

}  // namespace lmb
