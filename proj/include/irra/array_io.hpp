#pragma once

#include "irra/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace irra {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

/// Container of named float64 arrays plus free-form JSON metadata.
///
/// On disk: the 8 magic bytes "IRRAARR1", a little-endian uint64 header
/// length, a UTF-8 JSON header
///   {"arrays": {name: {"shape": [...], "offset": bytes}}, "metadata": {...}}
/// and finally the little-endian float64 payload; offsets are relative to
/// the first payload byte.
struct ArrayFile {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
  const NamedArray* find(const std::string& name) const;
};

void save_array_file(const std::filesystem::path& path, const ArrayFile& file);
/// Throws IoError when unreadable and ParseError on a malformed container.
ArrayFile load_array_file(const std::filesystem::path& path);

}  // namespace irra
