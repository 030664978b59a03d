#pragma once

#include <functional>
#include <span>
#include <vector>

#include "svgl/netcore.hpp"

namespace svgl {

enum class InterpolantKind { linear };

/// Path x_t = alpha(t) x0 + sigma(t) eps between data (t = 0) and noise (t = 1).
struct Interpolant {
  InterpolantKind kind = InterpolantKind::linear;

  double alpha(double t) const;
  double sigma(double t) const;
  double alpha_rate(double t) const;
  double sigma_rate(double t) const;
};

struct NoiseSample {
  Tensor x0;
  Tensor eps;
  double t = 0.0;
  Tensor xt;
  Tensor v;
};

Tensor corrupt(const Interpolant& interp, const Tensor& x0, const Tensor& eps, double t);
/// d x_t / dt; for the linear path eps - x0 regardless of t.
Tensor velocity_target(const Tensor& x0, const Tensor& eps);
Tensor velocity_target(const Interpolant& interp, const Tensor& x0, const Tensor& eps, double t);
NoiseSample draw_noise_sample(const Interpolant& interp, const Tensor& x0, double t, Rng& rng);

enum class TimeScheme { uniform };

double sample_t(Rng& rng, TimeScheme scheme = TimeScheme::uniform);

/// Output of a trainable conditional field together with its reverse pass.
struct FieldPass {
  Tensor output;
  std::function<Gradients(const Tensor& output_grad)> backward;
};

/// (x_t batch, per-row t, per-row class) -> prediction with a backward closure.
using TrainableField =
    std::function<FieldPass(const Tensor& xt, std::span<const double> t, std::span<const int> classes)>;

using TimeWeighting = std::function<double(double t)>;

inline double unit_weighting(double) { return 1.0; }

struct TrainingBatch {
  Tensor x0;                // n x d
  std::vector<int> classes;  // n
};

struct LossResult {
  double loss = 0.0;
  Gradients grads;
  std::vector<double> t;  // per-sample draws, for inspection
};

/// Mean over the batch of lambda(t) * ||v_theta(x_t, t) - (eps - x0)||^2.
/// Per row: t first, then eps, drawn from `rng` in row order.
LossResult fm_loss(const TrainableField& model, const TrainingBatch& batch, const Interpolant& interp,
                   const TimeWeighting& weighting, Rng& rng);

/// Same convention with the noise itself as target.
LossResult eps_loss(const TrainableField& model, const TrainingBatch& batch, const Interpolant& interp,
                    const TimeWeighting& weighting, Rng& rng);

}  // namespace svgl
