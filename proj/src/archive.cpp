#include "unetseg/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "unetseg/error.hpp"

namespace unetseg {
namespace {

constexpr std::string_view kMagic = "UNETSEG-ARCHIVE";

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const char* src) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

bool valid_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') return false;
  }
  return true;
}

DType parse_dtype(const std::string& s, const std::filesystem::path& path) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw LoadError(path.string() + ": unknown dtype '" + s + "'");
}

}  // namespace

std::string_view to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

const std::string* Archive::find_meta(std::string_view key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

const ArchiveEntry* Archive::find(std::string_view name) const {
  for (const auto& e : arrays) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Archive::set_meta(std::string key, std::string value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta.emplace_back(std::move(key), std::move(value));
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  std::string header;
  header += std::string(kMagic) + " " + std::to_string(archive.version) + "\n";
  for (const auto& [key, value] : archive.meta) {
    if (!valid_token(key) || value.find('\n') != std::string::npos) {
      throw ContractError("archive meta entry '" + key + "' is not representable");
    }
    header += "meta " + key + " " + value + "\n";
  }
  std::string payload;
  for (const auto& e : archive.arrays) {
    if (!valid_token(e.name)) throw ContractError("archive array name '" + e.name + "' is invalid");
    if (shape_numel(e.shape) != e.values.size()) {
      throw ShapeError("archive array " + e.name + " has shape " + shape_string(e.shape) +
                       " but " + std::to_string(e.values.size()) + " values");
    }
    header += "array " + e.name + " " + std::string(to_string(e.dtype)) + " " +
              std::to_string(e.shape.size());
    for (std::size_t d : e.shape) header += " " + std::to_string(d);
    header += "\n";
    for (double v : e.values) {
      if (e.dtype == DType::f32) {
        put_le(payload, static_cast<float>(v));
      } else {
        put_le(payload, v);
      }
    }
  }
  header += "data " + std::to_string(payload.size()) + "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write archive " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing archive " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw LoadError(path.string() + ": truncated manifest");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };

  Archive archive;
  {
    std::istringstream first(next_line());
    std::string magic;
    int version = 0;
    if (!(first >> magic >> version) || magic != kMagic) {
      throw LoadError(path.string() + ": not a weight archive");
    }
    if (version != kArchiveVersion) {
      throw LoadError(path.string() + ": archive version " + std::to_string(version) +
                      " does not match supported version " + std::to_string(kArchiveVersion));
    }
    archive.version = version;
  }

  std::size_t payload_size = 0;
  for (;;) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      const std::size_t value_at = line.find(' ', 5 + key.size());
      archive.meta.emplace_back(key, value_at == std::string::npos ? std::string()
                                                                    : line.substr(value_at + 1));
    } else if (tag == "array") {
      ArchiveEntry e;
      std::string dtype;
      std::size_t rank = 0;
      if (!(ls >> e.name >> dtype >> rank)) throw LoadError(path.string() + ": bad array line");
      e.dtype = parse_dtype(dtype, path);
      e.shape.resize(rank);
      for (auto& d : e.shape) {
        if (!(ls >> d)) throw LoadError(path.string() + ": bad shape for " + e.name);
      }
      archive.arrays.push_back(std::move(e));
    } else if (tag == "data") {
      if (!(ls >> payload_size)) throw LoadError(path.string() + ": bad data line");
      break;
    } else {
      throw LoadError(path.string() + ": unexpected manifest line '" + line + "'");
    }
  }

  std::size_t expected = 0;
  for (const auto& e : archive.arrays) expected += shape_numel(e.shape) * dtype_size(e.dtype);
  if (expected != payload_size) {
    throw LoadError(path.string() + ": manifest describes " + std::to_string(expected) +
                    " payload bytes but declares " + std::to_string(payload_size));
  }
  if (bytes.size() - pos != payload_size) {
    throw LoadError(path.string() + ": payload is " + std::to_string(bytes.size() - pos) +
                    " bytes, expected " + std::to_string(payload_size) + " (truncated?)");
  }
  const char* cursor = bytes.data() + pos;
  for (auto& e : archive.arrays) {
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (e.dtype == DType::f32) {
        e.values[i] = get_le<float>(cursor);
        cursor += 4;
      } else {
        e.values[i] = get_le<double>(cursor);
        cursor += 8;
      }
    }
  }
  return archive;
}

}  // namespace unetseg
