#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "svgl/latentspace.hpp"
#include "svgl/sampler.hpp"

namespace svgl {

struct EditConfig {
  double t_edit = 0.6;
  std::size_t steps = 100;
  double guidance = 4.0;
  double shift = 0.4;
  double blur_sigma = 1.0;
  std::uint64_t seed = 0;
};

struct EditResult {
  Tensor edited;          // H x W x C
  Tensor reconstruction;  // decode(encode(image))
  Trajectory inversion;
  std::size_t nfe = 0;
};

/// Inversion-guided regeneration of the masked region of one image.
///
/// The image is encoded and inverted to t_edit under `source_class`. Sampling
/// then restarts at t_edit from fresh noise mixed with the original features
/// and runs back to 0 under `new_class` with guidance. At every node the
/// predicted clean image is pulled towards the reconstruction wherever the
/// faded, softened mask preserves content, and the noise estimate is pulled
/// towards the inversion trajectory by the preserved fraction. The result is
/// composited with the reconstruction through the softened mask.
EditResult masked_edit(const VelocityNet& net, const CodecView& codec, const Tensor& image, const EditMask& mask,
                       int source_class, int new_class, const EditConfig& config);

/// Decoded samples for each interpolation weight in `lambdas`, all under one
/// class. Each frame is generated on its own so endpoints match plain sampling.
Tensor interpolation_sweep(const VelocityNet& net, const CodecView& codec, const Tensor& noise0,
                           const Tensor& noise1, int class_id, InterpolationMode mode,
                           std::span<const double> lambdas, const SamplerConfig& config);

struct ContinuityStats {
  std::vector<double> adjacent;  // L2 distance between consecutive frames
  double max = 0.0;
  double mean = 0.0;
  double ratio = 0.0;  // max / mean
};

ContinuityStats frame_continuity(const Tensor& frames);

}  // namespace svgl
