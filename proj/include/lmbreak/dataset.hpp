#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "lmbreak/faces.hpp"
#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"

namespace lmb {

struct SyntheticSource {
  FaceParams params;
  ImageSize size;
};

/// A record's pixels: either a file (relative to the dataset root) or a face
/// re-rendered on demand.
using ImageRef = std::variant<std::filesystem::path, SyntheticSource>;

enum class Split { All, Train, Val, Test };
enum class Provenance { Synthetic, Ingested };

const char* to_string(Split split);

struct DatasetRecord {
  std::string id;
  ImageRef image;
  LandmarkSet landmarks;
};

struct DatasetHandle {
  LandmarkSchema schema;
  std::vector<DatasetRecord> records;
  Split split = Split::All;
  Provenance provenance = Provenance::Synthetic;
  std::filesystem::path root;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  Image load_image(std::size_t index) const;
};

/// `count` independent random faces; record i uses seed mix(seed, i).
DatasetHandle make_synthetic_dataset(std::size_t count, std::uint64_t seed, ImageSize size = {128, 128});

/// `count` frames of one identity (fixed appearance, varying pose/expression).
DatasetHandle make_identity_dataset(std::uint64_t identity_seed, std::size_t count, std::uint64_t frame_seed,
                                    ImageSize size = {128, 128});

struct LoadDiagnostics {
  std::vector<std::string> messages;  // one per rejected record
};

/// Reads `<dir>/annotations.json`. Rejected records are reported in `diagnostics`;
/// throws DataError for a malformed file, a schema without the eye outer-corner
/// pair, or when no record survives.
DatasetHandle load_annotated_dataset(const std::filesystem::path& dir, LoadDiagnostics* diagnostics = nullptr);

/// Annotation document: sorted keys, coordinates with two decimals.
std::string annotation_json(const DatasetHandle& handle, const std::vector<std::string>& image_names);

/// Writes every image as PNG plus annotations.json; returns the written paths.
std::vector<std::filesystem::path> export_dataset(const DatasetHandle& handle, const std::filesystem::path& dir);

/// Deterministic shuffle then contiguous cut into train/val/test.
std::array<DatasetHandle, 3> split_dataset(const DatasetHandle& handle, std::array<double, 3> ratios,
                                           std::uint64_t seed);

/// Content hash over record ids and landmark coordinates.
std::string dataset_hash(const DatasetHandle& handle);

}  // namespace lmb
