#pragma once

#include <cstdint>
#include <vector>

#include "svgl/datagen.hpp"
#include "svgl/sampler.hpp"

namespace svgl {

inline constexpr double kOracleDelta = 1e-3;

/// Exact marginal velocity E[eps - x0 | x_t = x] of a Gaussian mixture under
/// the linear path. `x` is one point (d) or a batch (n x d); t in (0, 1).
Tensor oracle_velocity(const MixtureSpec& spec, const Tensor& x, double t);

/// Importance-weighted Monte-Carlo estimate of the same quantity from n prior
/// draws. Throws NumericError when the effective sample size drops below 10.
Tensor mc_velocity(const MixtureSpec& spec, const Tensor& x, double t, std::size_t n, std::uint64_t seed);

/// Velocity field backed by the oracle. Rows whose class is a valid class id
/// use that class's conditional mixture; any other id uses the pooled mixture.
/// Times are clamped into [delta, 1 - delta].
VelocityField oracle_field(const MixtureSpec& spec, bool class_conditional = false, double delta = kOracleDelta);

/// Euler on the oracle field from 1 - delta to delta, then one extrapolation
/// step to t = 0.
Tensor oracle_sample(const MixtureSpec& spec, const Tensor& noise, std::size_t steps);
Tensor oracle_sample(const VelocityField& field, const Tensor& noise, std::span<const int> classes,
                     std::size_t steps, double delta = kOracleDelta);

/// Mean over random unit directions of the exact one-dimensional W2 distance.
double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_proj, std::uint64_t seed);

/// Unbiased Gaussian-kernel MMD^2, clamped at zero.
double mmd(const Tensor& a, const Tensor& b, double bandwidth);

struct NoiseFloor {
  std::vector<double> draws;
  double mean = 0.0;
  double stddev = 0.0;

  /// mean + 3 std
  double bound() const { return mean + 3.0 * stddev; }
};

/// Sliced-W2 between pairs of independent n-point draws from `spec`.
NoiseFloor sw2_noise_floor(const MixtureSpec& spec, std::size_t n, std::size_t resamples, std::size_t n_proj,
                           std::uint64_t seed);
NoiseFloor summarize_floor(std::vector<double> draws);

}  // namespace svgl
