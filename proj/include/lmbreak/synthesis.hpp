#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "lmbreak/dataset.hpp"
#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"
#include "lmbreak/nn/network.hpp"

namespace lmb {

/// p -> s R(theta) p + t.
struct SimilarityTransform {
  double scale = 1.0;
  double theta = 0.0;  // radians
  double tx = 0.0, ty = 0.0;

  Point apply(Point p) const;
  SimilarityTransform inverse() const;
  /// (this o other)(p) = this(other(p)).
  SimilarityTransform compose(const SimilarityTransform& other) const;
};

/// Fixed 13-point layout of an upright mean face centred in a square crop.
/// Throws ShapeError unless k == 13 and crop_size >= 16.
LandmarkSet canonical_template(std::size_t k, int crop_size);

/// Least-squares similarity (no reflection) taking src onto dst. Throws
/// DataError when all src points coincide, ShapeError on schema mismatch.
SimilarityTransform similarity_transform(const LandmarkSet& src, const LandmarkSet& dst);

/// crop(q) = image(T^{-1}(q)) with bilinear sampling; taps outside the image
/// contribute zero.
Image warp_crop(const Image& image, const SimilarityTransform& transform, int crop_size);

/// Crop of `image` aligned so `landmarks` best match the canonical template.
Image align_face(const Image& image, const LandmarkSet& landmarks, int crop_size);

struct SynthMetadata {
  int epochs = 0;
  std::uint64_t seed = 0;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  double baseline_val_mse = 0.0;  // untrained network
  double val_mse = 0.0;
  double val_ssim = 0.0;
  std::vector<double> train_mse;  // per epoch
};

/// Small convolutional autoencoder over aligned face crops.
class Synthesizer {
 public:
  Synthesizer(int crop_size, std::vector<float> weights, SynthMetadata metadata = {});

  static std::shared_ptr<const nn::Graph> build_graph(int crop_size);
  static Synthesizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int crop_size() const { return crop_size_; }
  std::span<const float> weights() const { return weights_; }
  const SynthMetadata& metadata() const { return metadata_; }

  /// Reconstruction clamped to [0,255]. Safe to call concurrently.
  Image reconstruct(const Image& crop) const;

 private:
  int crop_size_;
  std::vector<float> weights_;
  SynthMetadata metadata_;
  std::shared_ptr<const nn::Network<float>> net_;
};

struct SynthTrainingOptions {
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double val_fraction = 0.15;
  std::uint64_t seed = 1;
  std::function<void(int, double)> on_epoch;  // (epoch, train MSE)
};

/// Trains on aligned crops, holding out the last val_fraction of them.
/// Throws DataError below 200 crops or on mixed sizes, NumericError on divergence.
Synthesizer train_synthesizer(const std::vector<Image>& crops, const SynthTrainingOptions& options);

/// Aligned crops of every record, using its ground-truth landmarks.
std::vector<Image> aligned_crops(const DatasetHandle& data, int crop_size);

/// SSIM between the reconstructions of the image aligned with the clean and
/// with the attacked landmarks. Exactly 1.0 when the landmark sets are equal.
double ssim_w_pipeline(const Image& image, const LandmarkSet& clean_landmarks, const LandmarkSet& attacked_landmarks,
                       const Synthesizer& synth);

}  // namespace lmb
