#include "lmbreak/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "lmbreak/error.hpp"
#include "lmbreak/hash.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

namespace fs = std::filesystem;

const char* to_string(Split split) {
  switch (split) {
    case Split::All: return "all";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Image DatasetHandle::load_image(std::size_t index) const {
  const DatasetRecord& rec = records.at(index);
  if (const auto* synth = std::get_if<SyntheticSource>(&rec.image)) return render_face(synth->params, synth->size).image;
  const auto& rel = std::get<fs::path>(rec.image);
  return load_png(rel.is_absolute() ? rel : root / rel);
}

static std::string record_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

DatasetHandle make_synthetic_dataset(std::size_t count, std::uint64_t seed, ImageSize size) {
  DatasetHandle h;
  h.schema = LandmarkSchema::face13();
  h.records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FaceParams p = sample_face_params(mix_seed(seed, i), size);
    h.records.push_back({record_id("face_", i), SyntheticSource{p, size}, face_landmarks(p)});
  }
  return h;
}

DatasetHandle make_identity_dataset(std::uint64_t identity_seed, std::size_t count, std::uint64_t frame_seed,
                                    ImageSize size) {
  DatasetHandle h;
  h.schema = LandmarkSchema::face13();
  const FaceParams identity = sample_face_params(identity_seed, size);
  h.records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FaceParams p = vary_frame(identity, mix_seed(frame_seed, i));
    h.records.push_back({record_id("frame_", i), SyntheticSource{p, size}, face_landmarks(p)});
  }
  return h;
}

static std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string annotation_json(const DatasetHandle& handle, const std::vector<std::string>& image_names) {
  if (image_names.size() != handle.size()) throw DataError("annotation_json: one image name per record required");
  std::ostringstream os;
  os << "{\"records\":[";
  for (std::size_t i = 0; i < handle.size(); ++i) {
    if (i) os << ',';
    os << "{\"image\":" << nlohmann::json(image_names[i]).dump() << ",\"landmarks\":[";
    const auto& coords = handle.records[i].landmarks.coords;
    for (std::size_t j = 0; j < coords.size(); ++j) {
      if (j) os << ',';
      os << '[' << fixed2(coords[j].x) << ',' << fixed2(coords[j].y) << ']';
    }
    os << "]}";
  }
  os << "],\"schema\":" << nlohmann::json(handle.schema.names()).dump() << "}\n";
  return os.str();
}

std::vector<fs::path> export_dataset(const DatasetHandle& handle, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::vector<std::string> names;
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < handle.size(); ++i) {
    const std::string name = "images/" + handle.records[i].id + ".png";
    save_png(handle.load_image(i), dir / name);
    names.push_back(name);
    written.push_back(dir / name);
  }
  const fs::path ann = dir / "annotations.json";
  std::ofstream out(ann, std::ios::binary);
  if (!out) throw DataError("cannot write " + ann.string());
  out << annotation_json(handle, names);
  written.push_back(ann);
  return written;
}

DatasetHandle load_annotated_dataset(const fs::path& dir, LoadDiagnostics* diagnostics) {
  const fs::path ann = dir / "annotations.json";
  std::ifstream in(ann);
  if (!in) throw DataError("missing annotation file: " + ann.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed annotation file " + ann.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema") || !doc.contains("records") || !doc["schema"].is_array() ||
      !doc["records"].is_array())
    throw DataError("annotation file " + ann.string() + " must hold 'schema' and 'records' arrays");

  std::vector<std::string> names;
  for (const auto& n : doc["schema"]) {
    if (!n.is_string()) throw DataError("schema entries must be strings");
    names.push_back(n.get<std::string>());
  }
  DatasetHandle h;
  h.schema = LandmarkSchema(names);
  h.provenance = Provenance::Ingested;
  h.root = dir;
  if (!h.schema.has_normalization_pair())
    throw DataError("schema in " + ann.string() + " does not name '" + kLeftEyeOuterName + "' and '" +
                    kRightEyeOuterName + "'");

  LoadDiagnostics local;
  LoadDiagnostics& diag = diagnostics ? *diagnostics : local;
  std::size_t index = 0;
  for (const auto& rec : doc["records"]) {
    const std::string where = "record " + std::to_string(index++);
    if (!rec.is_object() || !rec.contains("image") || !rec["image"].is_string() || !rec.contains("landmarks") ||
        !rec["landmarks"].is_array()) {
      diag.messages.push_back(where + ": malformed record");
      continue;
    }
    const fs::path rel = rec["image"].get<std::string>();
    if (!fs::exists(dir / rel)) {
      diag.messages.push_back(where + ": missing image file " + (dir / rel).string());
      continue;
    }
    LandmarkSet set{h.schema, {}};
    bool ok = true;
    for (const auto& pt : rec["landmarks"]) {
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
        ok = false;
        break;
      }
      set.coords.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    if (!ok || set.coords.size() != h.schema.size()) {
      diag.messages.push_back(where + ": landmarks do not match the " + std::to_string(h.schema.size()) +
                              "-point schema");
      continue;
    }
    h.records.push_back({rel.stem().string(), rel, std::move(set)});
  }
  if (h.records.empty()) {
    std::string msg = "no valid records in " + ann.string();
    for (const auto& m : diag.messages) msg += "\n  " + m;
    throw DataError(msg);
  }
  return h;
}

std::array<DatasetHandle, 3> split_dataset(const DatasetHandle& handle, std::array<double, 3> ratios,
                                           std::uint64_t seed) {
  for (double r : ratios)
    if (!(r > 0.0)) throw DataError("split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
  const std::size_t n = handle.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5b1));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  if (n_train + n_val >= n || n_train == 0 || n_val == 0)
    throw DataError("split ratios leave an empty partition for " + std::to_string(n) + " records");
  const std::array<std::size_t, 4> cuts{0, n_train, n_train + n_val, n};
  const std::array<Split, 3> tags{Split::Train, Split::Val, Split::Test};
  std::array<DatasetHandle, 3> out;
  for (int s = 0; s < 3; ++s) {
    std::vector<std::size_t> idx(order.begin() + static_cast<long>(cuts[s]), order.begin() + static_cast<long>(cuts[s + 1]));
    std::sort(idx.begin(), idx.end());
    out[s].schema = handle.schema;
    out[s].split = tags[s];
    out[s].provenance = handle.provenance;
    out[s].root = handle.root;
    for (std::size_t i : idx) out[s].records.push_back(handle.records[i]);
  }
  return out;
}

std::string dataset_hash(const DatasetHandle& handle) {
  std::ostringstream os;
  for (const auto& name : handle.schema.names()) os << name << '|';
  char buf[64];
  for (const auto& rec : handle.records) {
    os << rec.id << ':';
    for (const Point& p : rec.landmarks.coords) {
      std::snprintf(buf, sizeof buf, "%.4f,%.4f;", p.x, p.y);
      os << buf;
    }
    os << '\n';
  }
  return sha256_hex(os.str());
}

}  // namespace lmb
