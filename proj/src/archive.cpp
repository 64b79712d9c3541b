#include "lmbreak/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lmbreak/error.hpp"

namespace lmb {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'M', 'B', 'A', 'R', 'C', 'H', '1'};

void put_u64(std::vector<char>& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.insert(out.end(), b, b + 8);
}

}  // namespace

std::vector<char> encode_archive(const Archive& archive) {
  if (!archive.header.contains("version") || !archive.header.contains("type"))
    throw DataError("archive header requires 'version' and 'type'");
  const std::string header = archive.header.dump();
  std::vector<char> out(kMagic, kMagic + 8);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  put_u64(out, archive.weights.size());
  const auto* w = reinterpret_cast<const char*>(archive.weights.data());
  out.insert(out.end(), w, w + archive.weights.size() * sizeof(float));
  return out;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write archive " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Archive read_archive(const std::filesystem::path& path, const std::string& expected_type) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not an archive (bad magic): " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (!in || header_len > (1u << 26)) throw DataError("corrupt archive header length: " + path.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  Archive a;
  try {
    a.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt archive header in " + path.string() + ": " + e.what());
  }
  if (!a.header.contains("version") || !a.header["version"].is_number_integer())
    throw DataError("archive " + path.string() + " has no version field");
  if (a.header["version"].get<int>() != kArchiveVersion)
    throw DataError("unsupported archive version " + a.header["version"].dump() + " in " + path.string());
  const std::string type = a.header.value("type", "");
  if (!expected_type.empty() && type != expected_type)
    throw DataError("archive " + path.string() + " holds '" + type + "', expected '" + expected_type + "'");
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in || count > (1ull << 32)) throw DataError("corrupt archive weight count: " + path.string());
  a.weights.resize(count);
  in.read(reinterpret_cast<char*>(a.weights.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw DataError("truncated archive " + path.string());
  return a;
}

}  // namespace lmb
