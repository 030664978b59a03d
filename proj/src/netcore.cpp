#include "svgl/netcore.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>

#include "svgl/error.hpp"

namespace svgl {

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor out(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : out.values()) v = dist(rng);
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

const char* to_string(Activation activation) {
  switch (activation) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

double activate(Activation activation, double x) {
  switch (activation) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::silu: return x / (1.0 + std::exp(-x));
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

double activate_derivative(Activation activation, double x) {
  switch (activation) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s + x * s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

Tensor activate(Activation activation, const Tensor& pre) {
  Tensor out = pre;
  for (double& v : out.values()) v = activate(activation, v);
  return out;
}

Tensor activate_backward(Activation activation, const Tensor& pre, const Tensor& upstream) {
  require_same_shape(pre, upstream, "activate_backward");
  Tensor out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= activate_derivative(activation, pre[i]);
  return out;
}

std::uint64_t Mlp::next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Mlp::Mlp(const Mlp& other)
    : dims_(other.dims_), activation_(other.activation_), layers_(other.layers_), id_(next_id()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    dims_ = other.dims_;
    activation_ = other.activation_;
    layers_ = other.layers_;
    ++version_;
  }
  return *this;
}

Mlp Mlp::init(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("mlp needs at least an input and an output width");
  for (std::size_t d : layer_dims)
    if (d == 0) throw ConfigError("mlp layer widths must be positive");
  Mlp net;
  net.dims_ = std::move(layer_dims);
  net.activation_ = activation;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < net.dims_.size(); ++i) {
    const std::size_t fan_in = net.dims_[i], fan_out = net.dims_[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Tensor({fan_in, fan_out}), Tensor({fan_out})};
    for (double& w : layer.weight.values()) w = dist(rng);
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

Mlp Mlp::from_layers(std::vector<DenseLayer> layers, Activation activation) {
  if (layers.empty()) throw ConfigError("mlp needs at least one layer");
  Mlp net;
  net.activation_ = activation;
  net.dims_.push_back(layers.front().weight.extent(0));
  for (const auto& layer : layers) {
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.weight.extent(0) != net.dims_.back() ||
        layer.weight.extent(1) != layer.bias.extent(0)) {
      throw ShapeError("mlp layers do not compose");
    }
    net.dims_.push_back(layer.weight.extent(1));
  }
  net.layers_ = std::move(layers);
  return net;
}

namespace {

Tensor affine(const Tensor& x, const DenseLayer& layer) {
  const std::size_t n = x.rows();
  Tensor out({n, layer.weight.extent(1)});
  auto y = out.matrix();
  y.noalias() = x.matrix() * layer.weight.matrix();
  const auto b = Eigen::Map<const Eigen::RowVectorXd>(layer.bias.data().data(),
                                                      static_cast<Eigen::Index>(layer.bias.size()));
  y.rowwise() += b;
  return out;
}

Tensor as_batch(const Tensor& input, std::size_t width) {
  if (input.cols() != width) {
    throw ShapeError("mlp input width " + std::to_string(input.cols()) + " != " + std::to_string(width));
  }
  if (input.rank() == 2) return input;
  return input.reshaped({input.rows(), input.cols()});
}

}  // namespace

MlpForward Mlp::forward(const Tensor& input) const {
  if (layers_.empty()) throw UsageError("forward on an uninitialised mlp");
  MlpForward result;
  result.cache.owner_id = id_;
  result.cache.owner_version = version_;
  Tensor x = as_batch(input, dims_.front());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Tensor pre = affine(x, layers_[i]);
    result.cache.inputs.push_back(std::move(x));
    if (i + 1 < layers_.size()) {
      x = activate(activation_, pre);
      result.cache.pre.push_back(std::move(pre));
    } else {
      result.output = std::move(pre);
    }
  }
  if (input.rank() != 2) {
    std::vector<std::size_t> shape = input.shape();
    shape.back() = dims_.back();
    result.output = result.output.reshaped(std::move(shape));
  }
  return result;
}

Tensor Mlp::apply(const Tensor& input) const {
  if (layers_.empty()) throw UsageError("forward on an uninitialised mlp");
  Tensor x = as_batch(input, dims_.front());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Tensor pre = affine(x, layers_[i]);
    x = i + 1 < layers_.size() ? activate(activation_, pre) : std::move(pre);
  }
  if (input.rank() != 2) {
    std::vector<std::size_t> shape = input.shape();
    shape.back() = dims_.back();
    x = x.reshaped(std::move(shape));
  }
  return x;
}

MlpBackward Mlp::backward(const MlpCache& cache, const Tensor& output_grad) const {
  if (cache.inputs.size() != layers_.size() || cache.owner_id != id_) {
    throw UsageError("mlp backward called with a missing or foreign cache");
  }
  if (cache.owner_version != version_) throw UsageError("mlp backward called with a stale cache");
  const std::size_t n = cache.inputs.front().rows();
  if (output_grad.rows() != n || output_grad.cols() != dims_.back()) {
    throw ShapeError("output gradient does not match forward output");
  }
  MlpBackward result;
  result.param_grads.resize(2 * layers_.size());
  Tensor g = output_grad.reshaped({n, dims_.back()});
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseLayer& layer = layers_[li];
    const Tensor& x = cache.inputs[li];
    Tensor dw(layer.weight.shape());
    dw.matrix().noalias() = x.matrix().transpose() * g.matrix();
    Tensor db(layer.bias.shape());
    Eigen::Map<Eigen::RowVectorXd>(db.data().data(), static_cast<Eigen::Index>(db.size())) =
        g.matrix().colwise().sum();
    Tensor gin({n, layer.weight.extent(0)});
    gin.matrix().noalias() = g.matrix() * layer.weight.matrix().transpose();
    result.param_grads[2 * li] = std::move(dw);
    result.param_grads[2 * li + 1] = std::move(db);
    if (li > 0) {
      g = activate_backward(activation_, cache.pre[li - 1], gin);
    } else {
      result.input_grad = std::move(gin);
    }
  }
  return result;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::vector<Tensor*> Mlp::parameters() {
  ++version_;
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

void Mlp::zero_output_layer() {
  ++version_;
  layers_.back().weight.fill(0.0);
  layers_.back().bias.fill(0.0);
}

Gradients zero_gradients(std::span<const Tensor* const> params) {
  Gradients grads;
  grads.reserve(params.size());
  for (const Tensor* p : params) grads.emplace_back(p->shape());
  return grads;
}

void accumulate(Gradients& into, const Gradients& from) {
  if (into.size() != from.size()) throw ShapeError("gradient lists differ in length");
  for (std::size_t i = 0; i < into.size(); ++i) axpy(1.0, from[i], into[i]);
}

bool all_finite(const Gradients& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const Tensor& g) { return g.all_finite(); });
}

std::uint64_t parameter_checksum(std::span<const Tensor* const> params) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= p[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const Tensor* t : params) {
    for (std::size_t e : t->shape()) {
      const std::uint64_t e64 = e;
      mix(&e64, sizeof e64);
    }
    for (double v : t->values()) {
      const float f = static_cast<float>(v);
      mix(&f, sizeof f);
    }
  }
  return hash;
}

AdamWState AdamWState::for_parameters(std::span<const Tensor* const> params, const AdamWConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("AdamW learning rate must be positive");
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in (0, 1)");
  }
  if (config.weight_decay < 0.0 || !(config.epsilon > 0.0)) {
    throw ConfigError("AdamW weight decay must be >= 0 and epsilon > 0");
  }
  AdamWState state;
  state.config = config;
  for (const Tensor* p : params) {
    state.first_moment.emplace_back(p->shape());
    state.second_moment.emplace_back(p->shape());
  }
  return state;
}

void adamw_step(std::span<Tensor* const> params, const Gradients& grads, AdamWState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adamw: parameter, gradient and moment lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adamw gradient");
    require_same_shape(*params[i], state.first_moment[i], "adamw moment");
  }
  if (!all_finite(grads)) throw NumericError("adamw: non-finite gradient");

  const AdamWConfig& c = state.config;
  const std::uint64_t step = state.step + 1;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    const auto& g = grads[i].values();
    auto& m = state.first_moment[i].values();
    auto& v = state.second_moment[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= c.lr * c.weight_decay * p[j];
      p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  state.step = step;
}

double grad_check(const DifferentiableFunction& f, const Tensor& point, double h,
                  const GradCheckOptions& options) {
  if (!(h > 0.0 && h <= 1e-2)) throw ConfigError("grad_check step must lie in (0, 1e-2]");
  const ScalarEvaluation base = f(point);
  if (base.value.size() != 1) throw UsageError("grad_check needs a scalar-valued function");
  require_same_shape(base.gradient, point, "grad_check gradient");

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (options.max_coordinates != 0 && options.max_coordinates < coords.size()) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i : coords) {
    const double original = probe[i];
    probe[i] = original + h;
    const double plus = f(probe).value[0];
    probe[i] = original - h;
    const double minus = f(probe).value[0];
    probe[i] = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = base.gradient[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

Tensor flatten_parameters(std::span<const Tensor* const> params) {
  std::vector<double> flat;
  for (const Tensor* p : params) flat.insert(flat.end(), p->values().begin(), p->values().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

void unflatten_parameters(const Tensor& flat, std::span<Tensor* const> params) {
  std::size_t offset = 0;
  for (Tensor* p : params) {
    if (offset + p->size() > flat.size()) throw ShapeError("flat parameter vector too short");
    std::copy(flat.values().begin() + static_cast<std::ptrdiff_t>(offset),
              flat.values().begin() + static_cast<std::ptrdiff_t>(offset + p->size()), p->values().begin());
    offset += p->size();
  }
  if (offset != flat.size()) throw ShapeError("flat parameter vector too long");
}

Tensor flatten_gradients(const Gradients& grads) {
  std::vector<double> flat;
  for (const Tensor& g : grads) flat.insert(flat.end(), g.values().begin(), g.values().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

}  // namespace svgl
