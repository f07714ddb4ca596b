#include "irra/array_io.hpp"

#include "irra/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace irra {

namespace {

constexpr char kMagic[8] = {'I', 'R', 'R', 'A', 'A', 'R', 'R', '1'};

static_assert(std::endian::native == std::endian::little,
              "array container I/O assumes a little-endian host");

}  // namespace

const NamedArray* ArrayFile::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& ArrayFile::get(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw IndexError("array file has no array named '" + name + "'");
}

void save_array_file(const std::filesystem::path& path, const ArrayFile& file) {
  nlohmann::json arrays = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& a : file.arrays) {
    if (numel(a.shape) != a.values.size()) {
      throw ShapeError("array '" + a.name + "' has shape " + shape_str(a.shape) + " but " +
                       std::to_string(a.values.size()) + " values");
    }
    if (arrays.contains(a.name)) throw ConfigError("duplicate array name '" + a.name + "'");
    arrays[a.name] = {{"shape", a.shape}, {"offset", offset}};
    offset += a.values.size() * sizeof(double);
  }
  const nlohmann::json header = {{"arrays", arrays}, {"metadata", file.metadata}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : file.arrays) {
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ArrayFile load_array_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("'" + path.string() + "' is not an array container");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) {
    throw ParseError("'" + path.string() + "': truncated header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw ParseError("'" + path.string() + "': truncated header");
  }
  const std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': bad header JSON: " + e.what());
  }
  ArrayFile file;
  std::vector<std::uint64_t> offsets;
  try {
    if (header.contains("metadata")) file.metadata = header.at("metadata");
    for (const auto& [name, entry] : header.at("arrays").items()) {
      NamedArray a;
      a.name = name;
      a.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto bytes = numel(a.shape) * sizeof(double);
      if (offset + bytes > payload.size()) {
        throw ParseError("'" + path.string() + "': array '" + name + "' exceeds payload");
      }
      a.values.resize(numel(a.shape));
      std::memcpy(a.values.data(), payload.data() + offset, bytes);
      file.arrays.push_back(std::move(a));
      offsets.push_back(offset);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': malformed header: " + e.what());
  }
  // Restore write order.
  std::vector<std::size_t> order(file.arrays.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return offsets[a] < offsets[b]; });
  std::vector<NamedArray> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(std::move(file.arrays[i]));
  file.arrays = std::move(sorted);
  return file;
}

}  // namespace irra
