#include "svgl/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace svgl {

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler needs at least one step");
  if (!(shift > 0.0) || !std::isfinite(shift)) throw ConfigError("timestep shift must be positive");
  if (!(guidance >= 0.0) || !std::isfinite(guidance)) throw ConfigError("guidance scale must be non-negative");
}

double shift_time(double u, double shift) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return shift * u / (1.0 + (shift - 1.0) * u);
}

std::vector<double> time_grid(std::size_t steps, double shift) {
  if (steps < 1) throw ConfigError("time grid needs at least one step");
  if (!(shift > 0.0)) throw ConfigError("timestep shift must be positive");
  std::vector<double> grid(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double u = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
    grid[k] = shift_time(u, shift);
  }
  grid.front() = 1.0;
  grid.back() = 0.0;
  return grid;
}

SampleResult integrate(const VelocityField& field, std::span<const double> grid, const Tensor& start,
                       std::span<const int> classes, bool zero_init, bool record) {
  if (grid.size() < 2) throw ConfigError("integration grid needs two nodes");
  SampleResult result;
  result.trajectory.classes.assign(classes.begin(), classes.end());
  Tensor x = start;
  if (record) result.trajectory.nodes.push_back({grid[0], x});
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double dt = grid[k + 1] - grid[k];
    if (!(zero_init && k == 0)) {
      Tensor v = field(x, grid[k], classes);
      ++result.nfe;
      if (v.size() != x.size()) throw ShapeError("velocity field output does not match the state");
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * v[i];
    }
    if (!x.all_finite()) {
      throw SamplingError("non-finite state at t = " + std::to_string(grid[k + 1]), result.trajectory);
    }
    if (record) result.trajectory.nodes.push_back({grid[k + 1], x});
  }
  result.x = std::move(x);
  return result;
}

Tensor cfg_velocity(const VelocityNet& net, const Tensor& x, double t, std::span<const int> classes, double w) {
  const std::size_t n = x.rows();
  const std::vector<double> ts(n, t);
  if (w == 1.0) return net.forward(x, ts, classes);
  const std::vector<int> null_classes(n, net.null_class());
  Tensor v_null = net.forward(x, ts, null_classes);
  if (w == 0.0) return v_null;
  for (int c : classes) {
    if (c < 0 || c > net.null_class()) throw ConfigError("class id outside the velocity net's range");
  }
  Tensor v_cond = net.forward(x, ts, classes);
  Tensor out(v_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_null[i] + w * (v_cond[i] - v_null[i]);
  return out;
}

VelocityField guided_field(const VelocityNet& net, double w) {
  return [&net, w](const Tensor& x, double t, std::span<const int> classes) {
    return cfg_velocity(net, x, t, classes, w);
  };
}

SampleResult euler_sample(const VelocityField& field, const SamplerConfig& config, const Tensor& noise,
                          std::span<const int> classes) {
  config.validate();
  if (classes.size() != noise.rows()) throw ShapeError("sampling needs one class per noise row");
  const std::vector<double> grid = time_grid(config.steps, config.shift);
  SampleResult r = integrate(field, grid, noise, classes, config.zero_init);
  r.trajectory.config = config;
  return r;
}

SampleResult euler_sample(const VelocityNet& net, const SamplerConfig& config, const Tensor& noise,
                          std::span<const int> classes) {
  if (noise.cols() != net.feature_dim()) throw ShapeError("noise width does not match the velocity net");
  return euler_sample(guided_field(net, config.guidance), config, noise, classes);
}

std::vector<double> inversion_grid(std::size_t steps, double shift, double t_edit) {
  if (!(t_edit > 0.0 && t_edit <= 1.0)) throw ConfigError("t_edit must lie in (0, 1]");
  const std::vector<double> grid = time_grid(steps, shift);
  std::vector<double> out;
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    if (*it < t_edit - 1e-12) out.push_back(*it);
  }
  out.push_back(t_edit);
  return out;
}

Trajectory invert(const VelocityField& field, const Tensor& x0, std::span<const int> classes, double t_edit,
                  std::size_t steps, double shift) {
  const std::vector<double> grid = inversion_grid(steps, shift, t_edit);
  SampleResult r = integrate(field, grid, x0, classes, false);
  r.trajectory.config.steps = steps;
  r.trajectory.config.shift = shift;
  return std::move(r.trajectory);
}

Trajectory invert(const VelocityNet& net, const Tensor& x0, std::span<const int> classes, double t_edit,
                  std::size_t steps, double shift, double guidance) {
  Trajectory tr = invert(guided_field(net, guidance), x0, classes, t_edit, steps, shift);
  tr.config.guidance = guidance;
  return tr;
}

Tensor interpolate_linear(const Tensor& x0, const Tensor& x1, double lambda) {
  require_same_shape(x0, x1, "interpolate_linear");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("interpolation weight must lie in [0, 1]");
  if (lambda == 0.0) return x0;
  if (lambda == 1.0) return x1;
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * x0[i] + lambda * x1[i];
  return out;
}

Tensor interpolate_slerp(const Tensor& x0, const Tensor& x1, double lambda) {
  require_same_shape(x0, x1, "interpolate_slerp");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("interpolation weight must lie in [0, 1]");
  const double n0 = norm(x0.data()), n1 = norm(x1.data());
  if (n0 < 1e-12 || n1 < 1e-12) throw UsageError("slerp endpoints must be non-zero");
  if (lambda == 0.0) return x0;
  if (lambda == 1.0) return x1;
  const double c = std::clamp(dot(x0.data(), x1.data()) / (n0 * n1), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta < 1e-6) return interpolate_linear(x0, x1, lambda);
  const double s = std::sin(theta);
  const double a = std::sin((1.0 - lambda) * theta) / s;
  const double b = std::sin(lambda * theta) / s;
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * x1[i];
  return out;
}

InterpolationMode interpolation_mode_from_string(const std::string& name) {
  if (name == "linear") return InterpolationMode::linear;
  if (name == "slerp") return InterpolationMode::slerp;
  throw ConfigError("unknown interpolation mode '" + name + "'");
}

const char* to_string(InterpolationMode mode) {
  return mode == InterpolationMode::linear ? "linear" : "slerp";
}

double fade_schedule(std::size_t k, std::size_t steps) {
  if (steps <= 1) return 1.0;
  const double u = static_cast<double>(std::min(k, steps - 1)) / static_cast<double>(steps - 1);
  if (u <= 0.7) return 1.0;
  return std::max(0.0, (1.0 - u) / 0.3);
}

double EditMask::fade(std::size_t k) const { return fade_schedule(k, steps); }

EditMask soften_mask(const Tensor& raw, double blur_sigma, std::size_t steps) {
  if (raw.rank() != 2) throw ShapeError("edit mask must be H x W");
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur sigma must be non-negative");
  for (double v : raw.values()) {
    if (v != 0.0 && v != 1.0) throw ConfigError("raw edit mask must be binary");
  }
  EditMask mask;
  mask.raw = raw;
  mask.steps = std::max<std::size_t>(steps, 1);
  if (blur_sigma == 0.0) {
    mask.softened = raw;
    return mask;
  }
  const auto radius = static_cast<long>(std::ceil(3.0 * blur_sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (blur_sigma * blur_sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const auto h = static_cast<long>(raw.extent(0)), w = static_cast<long>(raw.extent(1));
  auto clamp_index = [](long i, long n) { return std::clamp(i, 0L, n - 1); };
  Tensor tmp(raw.shape());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * raw[static_cast<std::size_t>(r * w + clamp_index(c + k, w))];
      }
      tmp[static_cast<std::size_t>(r * w + c)] = acc;
    }
  }
  mask.softened = Tensor(raw.shape());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(clamp_index(r + k, h) * w + c)];
      }
      mask.softened[static_cast<std::size_t>(r * w + c)] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return mask;
}

}  // namespace svgl
