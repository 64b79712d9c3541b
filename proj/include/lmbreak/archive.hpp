#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace lmb {

inline constexpr int kArchiveVersion = 1;

/// Checkpoint container: 8-byte magic "LMBARCH1", little-endian u64 header
/// length, UTF-8 JSON header (must carry "version" and "type"), little-endian
/// u64 weight count, then float32 weights.
struct Archive {
  nlohmann::json header;
  std::vector<float> weights;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
std::vector<char> encode_archive(const Archive& archive);

/// Throws DataError on bad magic, missing/unsupported version or a type other
/// than `expected_type` (when non-empty).
Archive read_archive(const std::filesystem::path& path, const std::string& expected_type = {});

}  // namespace lmb
