#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svgl/tensor.hpp"

namespace svgl {

using Rng = std::mt19937_64;

double uniform01(Rng& rng);
double standard_normal(Rng& rng);
/// Fill a tensor with i.i.d. N(0, 1) draws in storage order.
Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng);
/// Stable child seed for (seed, index); splitmix64 finaliser.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

enum class Activation { relu, silu, tanh };

Activation activation_from_string(const std::string& name);
const char* to_string(Activation activation);

/// Elementwise activation and its derivative evaluated at pre-activation `x`.
double activate(Activation activation, double x);
double activate_derivative(Activation activation, double x);
Tensor activate(Activation activation, const Tensor& pre);
/// upstream ⊙ σ'(pre)
Tensor activate_backward(Activation activation, const Tensor& pre, const Tensor& upstream);

/// Parameter gradients, index-aligned with the owning model's parameters().
using Gradients = std::vector<Tensor>;

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
};

class Mlp;

/// Activations recorded by Mlp::forward; only valid for the exact parameter
/// version that produced it.
struct MlpCache {
  std::uint64_t owner_id = 0;
  std::uint64_t owner_version = 0;
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<Tensor> pre;     // pre-activation of each layer
};

struct MlpForward {
  Tensor output;
  MlpCache cache;
};

struct MlpBackward {
  Gradients param_grads;
  Tensor input_grad;
};

/// Fully connected network: activation between layers, identity at output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  /// Weights ~ U(±sqrt(6 / (fan_in + fan_out))), biases zero.
  static Mlp init(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed);
  /// Assemble from explicit layers (checkpoint loading).
  static Mlp from_layers(std::vector<DenseLayer> layers, Activation activation);

  MlpForward forward(const Tensor& input) const;
  /// Forward without keeping activations.
  Tensor apply(const Tensor& input) const;
  MlpBackward backward(const MlpCache& cache, const Tensor& output_grad) const;

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t input_width() const { return dims_.front(); }
  std::size_t output_width() const { return dims_.back(); }
  Activation activation() const noexcept { return activation_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::size_t parameter_count() const;

  /// Mutable access invalidates outstanding caches.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  void zero_output_layer();

 private:
  static std::uint64_t next_id();

  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::relu;
  std::vector<DenseLayer> layers_;
  std::uint64_t id_ = next_id();
  std::uint64_t version_ = 0;
};

Gradients zero_gradients(std::span<const Tensor* const> params);
void accumulate(Gradients& into, const Gradients& from);
bool all_finite(const Gradients& grads);

/// FNV-1a over the float32-quantised parameter values, so a checksum survives
/// a checkpoint round trip.
std::uint64_t parameter_checksum(std::span<const Tensor* const> params);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double epsilon = 1e-8;
};

struct AdamWState {
  AdamWConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static AdamWState for_parameters(std::span<const Tensor* const> params, const AdamWConfig& config);
};

/// Decoupled weight decay Adam. Throws NumericError on non-finite gradients
/// without touching parameters or state.
void adamw_step(std::span<Tensor* const> params, const Gradients& grads, AdamWState& state);

struct ScalarEvaluation {
  Tensor value;     // must hold exactly one element
  Tensor gradient;  // same shape as the evaluation point
};

using DifferentiableFunction = std::function<ScalarEvaluation(const Tensor& point)>;

struct GradCheckOptions {
  /// 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

/// Central-difference check of the reverse-mode gradient. Returns the max over
/// checked coordinates of |a - b| / max(|a|, |b|, 1e-8).
double grad_check(const DifferentiableFunction& f, const Tensor& point, double h,
                  const GradCheckOptions& options = {});

/// Flatten parameters into one rank-1 tensor and back.
Tensor flatten_parameters(std::span<const Tensor* const> params);
void unflatten_parameters(const Tensor& flat, std::span<Tensor* const> params);
Tensor flatten_gradients(const Gradients& grads);

}  // namespace svgl
