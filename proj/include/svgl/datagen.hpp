#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svgl/netcore.hpp"

namespace svgl {

struct MixtureComponent {
  double weight = 0.0;
  std::vector<double> mean;
  double var = 1.0;  // isotropic
  int class_id = 0;
};

/// Labelled isotropic Gaussian mixture.
struct MixtureSpec {
  std::vector<MixtureComponent> components;

  std::size_t dim() const;
  int num_classes() const;
  /// Throws ConfigError when weights do not sum to one or dimensions differ.
  void validate() const;
  /// Components of one class with renormalised weights.
  MixtureSpec class_conditional(int class_id) const;
  double class_weight(int class_id) const;
  std::vector<double> class_centroid(int class_id) const;
  std::vector<double> pooled_mean() const;
  /// Pooled covariance, row-major d x d.
  std::vector<double> pooled_covariance() const;
};

enum class MixturePreset { dispersed, entangled };

MixturePreset preset_from_string(const std::string& name);
const char* to_string(MixturePreset preset);

/// Layout knobs for the two presets. Components sit on the grid
/// x in {-3c, -c, c, 3c} times y in {-b, b} (x only when d == 1); the presets
/// share component positions and differ only in how classes are assigned.
struct MixtureLayout {
  double spacing = 1.5;  // c
  double offset = 1.0;   // b
  double var = 0.36;
};

/// `dispersed` splits classes by the sign of x; `entangled` assigns them in a
/// checkerboard so both class centroids sit at the origin. A non-zero seed
/// applies a seeded random rotation to the whole layout.
MixtureSpec make_mixture(MixturePreset preset, std::size_t dim, std::uint64_t seed,
                         const MixtureLayout& layout = {});

struct LabeledPoints {
  Tensor points;  // n x d
  std::vector<int> labels;
};

LabeledPoints sample_mixture(const MixtureSpec& spec, std::size_t n, std::uint64_t seed);

enum class ShapeKind { disc, square, triangle, cross, ring, diamond };

inline constexpr std::size_t kShapeKindCount = 6;

const char* to_string(ShapeKind kind);

struct ShapeGeneratorConfig {
  std::size_t count = 0;
  std::size_t classes = 4;
  std::size_t size = 16;
  std::size_t channels = 3;
  double center_jitter = 0.15;  // fraction of the image side around the centre
  double min_scale = 0.22;      // shape radius as a fraction of the side
  double max_scale = 0.36;
  double background = 0.0;
  std::uint64_t seed = 0;
};

struct ShapeImageDataset {
  Tensor images;  // n x H x W x C in [0, 1]
  std::vector<int> labels;
  ShapeGeneratorConfig config;

  std::size_t count() const { return labels.size(); }
  std::size_t pixel_count() const { return images.size() / labels.size(); }
  /// Images flattened to n x (H*W*C).
  Tensor flat() const;
  ShapeImageDataset subset(std::span<const std::size_t> indices) const;
};

/// One shape per image on a dark background; class k always draws ShapeKind k.
ShapeImageDataset gen_shapes(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed);
ShapeImageDataset gen_shapes(const ShapeGeneratorConfig& config);

/// Deterministic train/held-out split of row indices.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};
Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const ShapeImageDataset& dataset);
ShapeImageDataset read_dataset(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const LabeledPoints& points, const MixtureSpec& spec);
LabeledPoints read_points(const std::filesystem::path& path, MixtureSpec* spec = nullptr);

}  // namespace svgl
