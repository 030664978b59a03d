#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "svgl/tensor.hpp"

namespace svgl {

using Json = nlohmann::json;

inline constexpr char kMagic[4] = {'S', 'V', 'G', 'L'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class Dtype { f32, f64, i32 };

struct NamedArray {
  std::string name;
  Dtype dtype = Dtype::f32;
  Tensor values;
};

/// Self-describing binary file: "SVGL", u32 version, u64 header length, JSON
/// header, then little-endian arrays in header order.
struct Container {
  std::string kind;
  Json meta = Json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);
/// Decode a container held in memory (used by the reader and by tests).
Container parse_container(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_container(const Container& container);

/// Write through a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::string read_text_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const Json& value);

/// Binary PPM (P6) of an H x W x 3 image in [0, 1]; P5 for one channel.
void write_pnm(const std::filesystem::path& path, const Tensor& image);
/// Tile n images (n x H x W x C) into a grid with `columns` columns.
Tensor tile_images(const Tensor& images, std::size_t columns, double pad_value = 1.0);

}  // namespace svgl
