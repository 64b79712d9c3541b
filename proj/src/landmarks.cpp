#include "lmbreak/landmarks.hpp"

#include <algorithm>

#include "lmbreak/error.hpp"

namespace lmb {

LandmarkSchema::LandmarkSchema(std::vector<std::string> names)
    : names_(std::make_shared<const std::vector<std::string>>(std::move(names))) {}

const LandmarkSchema& LandmarkSchema::face13() {
  static const LandmarkSchema schema({"left brow center", "right brow center", kLeftEyeOuterName, "left eye inner corner",
                                      "right eye inner corner", kRightEyeOuterName, "nose tip", "mouth left corner",
                                      "mouth right corner", "mouth top center", "mouth bottom center", "chin",
                                      "forehead center"});
  return schema;
}

const std::vector<std::string>& LandmarkSchema::names() const {
  static const std::vector<std::string> empty;
  return names_ ? *names_ : empty;
}

std::optional<std::size_t> LandmarkSchema::index_of(const std::string& name) const {
  const auto& n = names();
  auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) return std::nullopt;
  return static_cast<std::size_t>(it - n.begin());
}

bool LandmarkSchema::has_normalization_pair() const {
  return index_of(kLeftEyeOuterName).has_value() && index_of(kRightEyeOuterName).has_value();
}

const Point& LandmarkSet::named(const std::string& name) const {
  auto idx = schema.index_of(name);
  if (!idx) throw DataError("landmark schema has no point named '" + name + "'");
  return coords.at(*idx);
}

void LandmarkSet::validate() const {
  if (coords.size() != schema.size())
    throw DataError("landmark count " + std::to_string(coords.size()) + " does not match schema size " +
                    std::to_string(schema.size()));
  if (!schema.has_normalization_pair()) throw DataError("landmark schema lacks the eye outer-corner pair");
}

}  // namespace lmb
