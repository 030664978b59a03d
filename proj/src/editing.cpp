#include "svgl/editing.hpp"

#include <algorithm>
#include <cmath>

namespace svgl {

namespace {

Tensor one_row(const Tensor& t) { return t.reshaped({1, t.size()}); }

}  // namespace

EditResult masked_edit(const VelocityNet& net, const CodecView& codec, const Tensor& image, const EditMask& mask,
                       int source_class, int new_class, const EditConfig& config) {
  const ImageShape& shape = codec.shape;
  if (image.size() != shape.pixels()) throw ShapeError("edit image does not match the codec");
  if (mask.softened.rank() != 2 || mask.softened.extent(0) != shape.height ||
      mask.softened.extent(1) != shape.width) {
    throw ShapeError("edit mask must be " + std::to_string(shape.height) + " x " + std::to_string(shape.width));
  }
  if (!(config.t_edit > 0.0 && config.t_edit <= 1.0)) throw ConfigError("t_edit must lie in (0, 1]");
  const std::size_t hw = shape.height * shape.width, ch = shape.channels;

  const Tensor features = codec.encode(one_row(image));
  const Tensor z0_ref = normalize(features, codec.stats);
  EditResult result;
  result.reconstruction = codec.decode(features).reshaped({shape.height, shape.width, ch});
  const Tensor& recon = result.reconstruction;

  const std::vector<int> src{source_class};
  result.inversion = invert(net, z0_ref, src, config.t_edit, config.steps, config.shift, 1.0);
  const auto& inv = result.inversion.nodes;
  const std::size_t intervals = inv.size() - 1;

  Rng rng(derive_seed(config.seed, 0xed17));
  const Tensor noise = normal_tensor(z0_ref.shape(), rng);
  Tensor z(z0_ref.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0 - config.t_edit) * z0_ref[i] + config.t_edit * noise[i];

  const std::vector<int> dst{new_class};
  std::vector<double> keep(hw);
  for (std::size_t k = 0; k < intervals; ++k) {
    const TrajectoryNode& node = inv[intervals - k];
    const double t = node.t;
    const double t_next = inv[intervals - k - 1].t;
    Tensor v = cfg_velocity(net, z, t, dst, config.guidance);
    ++result.nfe;

    const double fade = fade_schedule(k, intervals);
    double keep_max = 0.0, keep_mean = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      keep[p] = (1.0 - mask.softened[p]) * fade;
      keep_max = std::max(keep_max, keep[p]);
      keep_mean += keep[p];
    }
    keep_mean /= static_cast<double>(hw);

    if (keep_max > 0.0) {
      Tensor x0_hat(z.shape()), eps_hat(z.shape());
      for (std::size_t i = 0; i < z.size(); ++i) {
        x0_hat[i] = z[i] - t * v[i];
        eps_hat[i] = z[i] + (1.0 - t) * v[i];
      }
      const Tensor pred = codec.decode(denormalize(x0_hat, codec.stats));
      Tensor blend(pred.shape());
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = p * ch + c;
          blend[i] = keep[p] * recon[i] + (1.0 - keep[p]) * pred[i];
        }
      }
      const Tensor shift = normalize(codec.encode(blend), codec.stats) - normalize(codec.encode(pred), codec.stats);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double x0_new = x0_hat[i] + shift[i];
        const double eps_inv = (node.x[i] - (1.0 - t) * z0_ref[i]) / t;
        const double eps_new = keep_mean * eps_inv + (1.0 - keep_mean) * eps_hat[i];
        z[i] = (1.0 - t) * x0_new + t * eps_new;
      }
      v = cfg_velocity(net, z, t, dst, config.guidance);
      ++result.nfe;
    }
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += (t_next - t) * v[i];
    if (!z.all_finite()) throw NumericError("masked edit produced a non-finite state");
  }

  const Tensor generated = codec.decode(denormalize(z, codec.stats));
  result.edited = Tensor({shape.height, shape.width, ch});
  for (std::size_t p = 0; p < hw; ++p) {
    const double m = mask.softened[p];
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = p * ch + c;
      result.edited[i] = m * generated[i] + (1.0 - m) * recon[i];
    }
  }
  return result;
}

Tensor interpolation_sweep(const VelocityNet& net, const CodecView& codec, const Tensor& noise0,
                           const Tensor& noise1, int class_id, InterpolationMode mode,
                           std::span<const double> lambdas, const SamplerConfig& config) {
  if (lambdas.empty()) throw ConfigError("interpolation grid is empty");
  const ImageShape& shape = codec.shape;
  Tensor frames({lambdas.size(), shape.height, shape.width, shape.channels});
  const std::vector<int> cls{class_id};
  for (std::size_t f = 0; f < lambdas.size(); ++f) {
    const Tensor start = mode == InterpolationMode::linear ? interpolate_linear(noise0, noise1, lambdas[f])
                                                           : interpolate_slerp(noise0, noise1, lambdas[f]);
    const SampleResult r = euler_sample(net, config, one_row(start), cls);
    const Tensor img = codec.decode(denormalize(r.x, codec.stats));
    std::copy(img.values().begin(), img.values().end(),
              frames.values().begin() + static_cast<std::ptrdiff_t>(f * shape.pixels()));
  }
  return frames;
}

ContinuityStats frame_continuity(const Tensor& frames) {
  const std::size_t n = frames.extent(0);
  if (n < 2) throw UsageError("continuity needs at least two frames");
  const std::size_t p = frames.size() / n;
  ContinuityStats s;
  for (std::size_t f = 0; f + 1 < n; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double d = frames[(f + 1) * p + i] - frames[f * p + i];
      acc += d * d;
    }
    s.adjacent.push_back(std::sqrt(acc));
  }
  for (double d : s.adjacent) {
    s.max = std::max(s.max, d);
    s.mean += d;
  }
  s.mean /= static_cast<double>(s.adjacent.size());
  s.ratio = s.mean > 0.0 ? s.max / s.mean : 0.0;
  return s;
}

}  // namespace svgl
