#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lmb {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

inline constexpr const char* kLeftEyeOuterName = "left eye outer corner";
inline constexpr const char* kRightEyeOuterName = "right eye outer corner";

/// Ordered landmark names. Cheap to copy (shared storage).
class LandmarkSchema {
 public:
  LandmarkSchema() = default;
  explicit LandmarkSchema(std::vector<std::string> names);

  /// The 13-point face schema used by the synthetic generator.
  static const LandmarkSchema& face13();

  std::size_t size() const { return names_ ? names_->size() : 0; }
  const std::vector<std::string>& names() const;
  const std::string& name(std::size_t i) const { return names().at(i); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  bool has_normalization_pair() const;

  bool operator==(const LandmarkSchema& other) const { return names() == other.names(); }

 private:
  std::shared_ptr<const std::vector<std::string>> names_;
};

/// Named indices into LandmarkSchema::face13().
namespace face13 {
enum Index : std::size_t {
  kLeftBrow = 0,
  kRightBrow,
  kLeftEyeOuter,
  kLeftEyeInner,
  kRightEyeInner,
  kRightEyeOuter,
  kNoseTip,
  kMouthLeft,
  kMouthRight,
  kMouthTop,
  kMouthBottom,
  kChin,
  kForehead,
  kCount
};
}  // namespace face13

struct LandmarkSet {
  LandmarkSchema schema;
  std::vector<Point> coords;

  std::size_t size() const { return coords.size(); }
  const Point& operator[](std::size_t i) const { return coords[i]; }
  Point& operator[](std::size_t i) { return coords[i]; }
  const Point& named(const std::string& name) const;
  /// Throws DataError unless coords match the schema and the normalization pair exists.
  void validate() const;

  bool operator==(const LandmarkSet&) const = default;
};

}  // namespace lmb
