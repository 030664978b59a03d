#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "svgl/datagen.hpp"
#include "svgl/netcore.hpp"

namespace svgl {

/// Per-channel population mean and std (floored at 1e-6).
struct ChannelStats {
  Tensor mean;
  Tensor std;
  std::size_t population = 0;

  static ChannelStats compute(const Tensor& features);
  std::size_t channels() const { return mean.size(); }
  /// Mean of the channel means and mean of the channel stds.
  double pooled_mean() const;
  double pooled_std() const;
};

inline constexpr double kStdFloor = 1e-6;

Tensor normalize(const Tensor& features, const ChannelStats& stats);
Tensor denormalize(const Tensor& features, const ChannelStats& stats);

struct ImageShape {
  std::size_t height = 16, width = 16, channels = 3;
  std::size_t pixels() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

ImageShape image_shape_of(const ShapeImageDataset& dataset);
/// Accept n x H x W x C or n x P and return n x P.
Tensor flatten_images(const Tensor& images, const ImageShape& shape);

struct SemanticConfig {
  std::vector<std::size_t> hidden = {256};
  std::size_t width = 32;
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 1e-3;
  double weight_decay = 1.0;
};

struct SemanticTrainingMeta {
  double train_accuracy = 0.0;
  std::size_t epochs = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

/// Image -> feature backbone. Once frozen its parameters can no longer be
/// reached mutably.
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(Mlp backbone, ImageShape shape) : backbone_(std::move(backbone)), shape_(shape) {}

  Tensor encode(const Tensor& images) const;
  std::size_t width() const { return backbone_.output_width(); }
  const ImageShape& image_shape() const { return shape_; }
  const Mlp& backbone() const { return backbone_; }
  /// Throws ContractError once frozen.
  Mlp& mutable_backbone();

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  std::uint64_t checksum() const;

  SemanticTrainingMeta meta;

 private:
  Mlp backbone_;
  ImageShape shape_;
  bool frozen_ = false;
};

/// Classification proxy training of an unfrozen encoder; the head is discarded.
/// Returns the final training accuracy of the head.
double train_semantic(SemanticEncoder& encoder, const ShapeImageDataset& dataset, const SemanticConfig& config,
                      std::uint64_t seed);
/// Build, train and freeze. Throws NumericError below 0.8 training accuracy.
SemanticEncoder pretrain_semantic(const ShapeImageDataset& dataset, const SemanticConfig& config,
                                  std::uint64_t seed);

struct CodecConfig {
  std::size_t residual_width = 8;  // 0 gives the semantic-only codec
  std::vector<std::size_t> residual_hidden = {256};
  std::vector<std::size_t> decoder_hidden = {256, 256};
  double align_weight = 0.1;
  std::size_t epochs = 40;
  std::size_t batch = 64;
  double lr = 1e-3;
};

/// Pooled semantic moments the residual channels are pulled towards.
struct AlignmentTarget {
  double mean = 0.0;
  double std = 1.0;
  static AlignmentTarget from_stats(const ChannelStats& semantic);
};

struct AlignmentValue {
  double penalty = 0.0;
  Tensor grad;  // d penalty / d residual
};

/// Sum over residual channels of (mu_c - target.mean)^2 + (sigma_c - target.std)^2
/// with batch (population) moments.
double alignment_penalty(const Tensor& residual, const ChannelStats& semantic_stats);
AlignmentValue alignment_penalty(const Tensor& residual, const AlignmentTarget& target);

struct SvgCodec {
  SemanticEncoder semantic;
  Mlp residual;  // empty when residual_width == 0
  Mlp decoder;
  ChannelStats stats;
  AlignmentTarget target;
  CodecConfig config;
  std::uint64_t semantic_checksum = 0;
  bool trained = false;

  static SvgCodec create(SemanticEncoder semantic, const CodecConfig& config, std::uint64_t seed);
  std::size_t semantic_width() const { return semantic.width(); }
  std::size_t residual_width() const { return config.residual_width; }
  std::size_t feature_width() const { return semantic_width() + residual_width(); }
  const ImageShape& image_shape() const { return semantic.image_shape(); }
  /// Residual and decoder parameters (the trainable part).
  std::vector<Tensor*> trainable_parameters();
  std::vector<const Tensor*> trainable_parameters() const;
};

/// [semantic | residual] features, n x (C_s + C_r).
Tensor svg_encode(const SvgCodec& codec, const Tensor& images);
/// n x H x W x C images clamped to [0, 1].
Tensor decode(const SvgCodec& codec, const Tensor& features);

struct CodecReport {
  std::vector<double> loss_curve;  // mean loss per epoch
  double final_recon_mse = 0.0;
  double final_penalty = 0.0;
};

/// Stage 1: trains residual encoder and decoder on reconstruction plus the
/// weighted alignment penalty, then recomputes the channel statistics.
CodecReport train_codec_stage1(SvgCodec& codec, const ShapeImageDataset& dataset, std::uint64_t seed);

struct BaselineConfig {
  std::size_t latent_width = 40;
  std::vector<std::size_t> hidden = {256};
  std::vector<std::size_t> decoder_hidden = {256, 256};
  double kl_weight = 0.0;  // > 0 enables the Gaussian reparameterisation
  std::size_t epochs = 40;
  std::size_t batch = 64;
  double lr = 1e-3;
};

struct BaselineCodec {
  Mlp encoder;  // outputs mean, or [mean | log-variance] when kl_weight > 0
  Mlp decoder;
  ChannelStats stats;
  BaselineConfig config;
  ImageShape shape;
  bool trained = false;

  std::size_t feature_width() const { return config.latent_width; }
};

BaselineCodec train_baseline_vae(const ShapeImageDataset& dataset, const BaselineConfig& config, std::uint64_t seed,
                                 CodecReport* report = nullptr);
/// Posterior means.
Tensor baseline_encode(const BaselineCodec& codec, const Tensor& images);
Tensor baseline_decode(const BaselineCodec& codec, const Tensor& features);

/// Uniform handle over either codec for sampling and editing.
struct CodecView {
  std::function<Tensor(const Tensor&)> encode;
  std::function<Tensor(const Tensor&)> decode;
  ChannelStats stats;
  ImageShape shape;
};

CodecView view_of(const SvgCodec& codec);
CodecView view_of(const BaselineCodec& codec);

}  // namespace svgl
