#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "svgl/error.hpp"
#include "svgl/flowmodel.hpp"

namespace svgl {

struct SamplerConfig {
  std::size_t steps = 25;
  double guidance = 1.55;
  bool zero_init = false;
  double shift = 1.0;  // 1 leaves the grid uniform
  std::uint64_t seed = 0;

  void validate() const;
};

/// tau(u) = s u / (1 + (s - 1) u), with tau(0) = 0 and tau(1) = 1 returned exactly.
double shift_time(double u, double shift);
/// steps + 1 times running from 1 down to 0.
std::vector<double> time_grid(std::size_t steps, double shift);

/// Batched velocity evaluation at a shared time.
using VelocityField = std::function<Tensor(const Tensor& x, double t, std::span<const int> classes)>;

struct TrajectoryNode {
  double t = 0.0;
  Tensor x;
};

struct Trajectory {
  std::vector<TrajectoryNode> nodes;  // in integration order
  std::vector<int> classes;
  SamplerConfig config;
};

struct SampleResult {
  Tensor x;
  Trajectory trajectory;
  std::size_t nfe = 0;
};

/// Raised when the state stops being finite; carries the nodes reached so far.
class SamplingError : public NumericError {
 public:
  SamplingError(const std::string& what, Trajectory partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

/// Euler integration along `grid` (any direction). With zero_init the first
/// velocity is taken as zero and not counted as an evaluation.
SampleResult integrate(const VelocityField& field, std::span<const double> grid, const Tensor& start,
                       std::span<const int> classes, bool zero_init = false, bool record = true);

/// v_null + w (v_class - v_null); w == 1 and w == 0 return the conditional and
/// null predictions themselves.
Tensor cfg_velocity(const VelocityNet& net, const Tensor& x, double t, std::span<const int> classes, double w);
VelocityField guided_field(const VelocityNet& net, double w);

SampleResult euler_sample(const VelocityField& field, const SamplerConfig& config, const Tensor& noise,
                          std::span<const int> classes);
SampleResult euler_sample(const VelocityNet& net, const SamplerConfig& config, const Tensor& noise,
                          std::span<const int> classes);

/// Ascending times: the nodes of time_grid(steps, shift) at or below t_edit,
/// followed by t_edit itself when it is not already a node.
std::vector<double> inversion_grid(std::size_t steps, double shift, double t_edit);

/// Integrate the sampling ODE from data (t = 0) up to t_edit.
Trajectory invert(const VelocityField& field, const Tensor& x0, std::span<const int> classes, double t_edit,
                  std::size_t steps, double shift = 1.0);
Trajectory invert(const VelocityNet& net, const Tensor& x0, std::span<const int> classes, double t_edit,
                  std::size_t steps, double shift = 1.0, double guidance = 1.0);

Tensor interpolate_linear(const Tensor& x0, const Tensor& x1, double lambda);
/// Great-circle interpolation; falls back to linear when the angle is below 1e-6.
Tensor interpolate_slerp(const Tensor& x0, const Tensor& x1, double lambda);

enum class InterpolationMode { linear, slerp };
InterpolationMode interpolation_mode_from_string(const std::string& name);
const char* to_string(InterpolationMode mode);

struct EditMask {
  Tensor raw;        // H x W in {0, 1}
  Tensor softened;   // H x W in [0, 1]
  std::size_t steps = 1;

  /// Multiplier for step k of `steps`: 1 for the first 70%, then linear to 0.
  double fade(std::size_t k) const;
};

double fade_schedule(std::size_t k, std::size_t steps);

/// Separable Gaussian blur (edge-clamped) of a binary mask, clamped to [0, 1].
EditMask soften_mask(const Tensor& raw, double blur_sigma, std::size_t steps);

}  // namespace svgl
