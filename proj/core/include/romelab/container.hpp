#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace romelab {

// On-disk tensor container, format version 1. Layout, all integers and
// floats little-endian:
//   magic "RLAB" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
//   u32 tensor count | per tensor: u32 name length | name | u32 ndim |
//   u64 dims[ndim] | f64 data, row-major.
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

struct Container {
  nlohmann::ordered_json metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

// Writes via a temp file in the same directory, then renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// FNV-1a 64-bit content hash, rendered as "fnv1a64:<hex>". Used to stamp
// reports with the identity of the weight files they were computed from.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace romelab
