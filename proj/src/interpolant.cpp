#include "svgl/interpolant.hpp"

#include <cmath>

#include "svgl/error.hpp"

namespace svgl {

double Interpolant::alpha(double t) const { return 1.0 - t; }
double Interpolant::sigma(double t) const { return t; }
double Interpolant::alpha_rate(double) const { return -1.0; }
double Interpolant::sigma_rate(double) const { return 1.0; }

namespace {

void require_unit_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("interpolant time must lie in [0, 1]");
}

enum class Target { velocity, noise };

LossResult regression_loss(const TrainableField& model, const TrainingBatch& batch, const Interpolant& interp,
                           const TimeWeighting& weighting, Rng& rng, Target target) {
  const std::size_t n = batch.x0.rows();
  if (n == 0 || batch.classes.size() != n) throw UsageError("loss needs a non-empty batch with one class per row");
  const std::size_t d = batch.x0.cols();

  LossResult result;
  result.t.resize(n);
  Tensor xt({n, d});
  Tensor goal({n, d});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = sample_t(rng);
    result.t[i] = t;
    const double a = interp.alpha(t), s = interp.sigma(t);
    const double da = interp.alpha_rate(t), ds = interp.sigma_rate(t);
    auto x0 = batch.x0.row(i);
    auto x = xt.row(i);
    auto y = goal.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double eps = normal(rng);
      x[j] = a * x0[j] + s * eps;
      y[j] = target == Target::velocity ? da * x0[j] + ds * eps : eps;
    }
  }

  FieldPass pass = model(xt, result.t, batch.classes);
  if (pass.output.rows() != n || pass.output.cols() != d) throw ShapeError("model output does not match batch");

  Tensor grad({n, d});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighting(result.t[i]);
    auto out = pass.output.row(i);
    auto y = goal.row(i);
    auto g = grad.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = out[j] - y[j];
      sq += r * r;
      g[j] = 2.0 * w * r / static_cast<double>(n);
    }
    total += w * sq;
  }
  result.loss = total / static_cast<double>(n);
  if (!std::isfinite(result.loss)) throw NumericError("non-finite training loss");
  if (pass.backward) result.grads = pass.backward(grad);
  return result;
}

}  // namespace

Tensor corrupt(const Interpolant& interp, const Tensor& x0, const Tensor& eps, double t) {
  require_same_shape(x0, eps, "corrupt");
  require_unit_time(t);
  if (t == 0.0) return x0;
  if (t == 1.0) return eps;
  const double a = interp.alpha(t), s = interp.sigma(t);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Tensor velocity_target(const Tensor& x0, const Tensor& eps) {
  require_same_shape(x0, eps, "velocity_target");
  return eps - x0;
}

Tensor velocity_target(const Interpolant& interp, const Tensor& x0, const Tensor& eps, double t) {
  require_same_shape(x0, eps, "velocity_target");
  require_unit_time(t);
  const double da = interp.alpha_rate(t), ds = interp.sigma_rate(t);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da * x0[i] + ds * eps[i];
  return out;
}

NoiseSample draw_noise_sample(const Interpolant& interp, const Tensor& x0, double t, Rng& rng) {
  NoiseSample s;
  s.x0 = x0;
  s.eps = normal_tensor(x0.shape(), rng);
  s.t = t;
  s.xt = corrupt(interp, x0, s.eps, t);
  s.v = velocity_target(interp, x0, s.eps, t);
  return s;
}

double sample_t(Rng& rng, TimeScheme scheme) {
  switch (scheme) {
    case TimeScheme::uniform: return uniform01(rng);
  }
  return 0.0;
}

LossResult fm_loss(const TrainableField& model, const TrainingBatch& batch, const Interpolant& interp,
                   const TimeWeighting& weighting, Rng& rng) {
  return regression_loss(model, batch, interp, weighting, rng, Target::velocity);
}

LossResult eps_loss(const TrainableField& model, const TrainingBatch& batch, const Interpolant& interp,
                    const TimeWeighting& weighting, Rng& rng) {
  return regression_loss(model, batch, interp, weighting, rng, Target::noise);
}

}  // namespace svgl
