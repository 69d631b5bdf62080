#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetseg/tensor.hpp"

namespace unetseg {

inline constexpr int kArchiveVersion = 1;

enum class DType { f32, f64 };

std::string_view to_string(DType dtype);
std::size_t dtype_size(DType dtype);

/// Values are carried as double; f32 entries convert exactly both ways.
struct ArchiveEntry {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

/// Weight archive: a text manifest followed by little-endian raw arrays in
/// manifest order. Layout (one item per line, '\n' terminated):
///
///   UNETSEG-ARCHIVE <version>
///   meta <key> <value to end of line>        zero or more
///   array <name> <f32|f64> <rank> <d0> ...    zero or more
///   data <payload bytes>
///   <payload>
///
/// The file ends exactly at the end of the payload.
struct Archive {
  int version = kArchiveVersion;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<ArchiveEntry> arrays;

  const std::string* find_meta(std::string_view key) const;
  const ArchiveEntry* find(std::string_view name) const;
  void set_meta(std::string key, std::string value);
};

void write_archive(const Archive& archive, const std::filesystem::path& path);

/// Throws IoError when the file cannot be opened and LoadError for a
/// malformed, truncated or version-mismatched archive.
Archive read_archive(const std::filesystem::path& path);

}  // namespace unetseg
