#pragma once

#include <filesystem>
#include <string>

#include "svgl/flowmodel.hpp"
#include "svgl/io.hpp"
#include "svgl/latentspace.hpp"

namespace svgl {

/// Checkpoints store parameters as little-endian float32, so a loaded model
/// matches the saved one up to single-precision rounding.
void save_semantic(const std::filesystem::path& path, const SemanticEncoder& encoder);
SemanticEncoder load_semantic(const std::filesystem::path& path);

void save_codec(const std::filesystem::path& path, const SvgCodec& codec);
/// Verifies the embedded encoder against the checksum recorded at training time.
SvgCodec load_codec(const std::filesystem::path& path);

void save_baseline(const std::filesystem::path& path, const BaselineCodec& codec);
BaselineCodec load_baseline(const std::filesystem::path& path);

/// What a velocity net was trained on.
struct FlowProvenance {
  std::string source = "mixture";  // mixture | codec | baseline
  std::string codec_path;
  std::string semantic_checksum;  // hex, empty unless trained on an SVG codec
  std::string codec_checksum;     // hex of the codec's trainable parameters
  Json train = Json::object();    // schedule, weighting, t sampling, label dropout
  Json mixture;                   // mixture spec when source == mixture
};

void save_flow(const std::filesystem::path& path, const VelocityNet& net, const FlowProvenance& provenance);
VelocityNet load_flow(const std::filesystem::path& path, FlowProvenance* provenance = nullptr);

std::string hex64(std::uint64_t value);
std::uint64_t codec_checksum(const SvgCodec& codec);
std::uint64_t baseline_checksum(const BaselineCodec& codec);

Json mixture_to_json(const MixtureSpec& spec);
MixtureSpec mixture_from_json(const Json& j);

}  // namespace svgl
