#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svgl/interpolant.hpp"
#include "svgl/netcore.hpp"

namespace svgl {

/// Sinusoidal embedding [sin(f_j t)..., cos(f_j t)...] with dim/2 geometric
/// frequencies from 1 to 1000.
Tensor time_embed(double t, std::size_t dim);
void time_embed_into(double t, std::span<double> out);

struct AttentionConfig {
  bool enabled = false;
  std::size_t tokens = 4;  // hidden width is split into this many tokens
  std::size_t heads = 2;
  bool qk_norm = true;
};

/// Multi-head self-attention over a short token sequence. With qk_norm the
/// per-head query/key vectors are unit-normalised and scaled by a learned
/// temperature exp(log_temperature[h]).
struct AttentionBlock {
  std::size_t width = 0;  // per-token width
  std::size_t heads = 1;
  bool qk_norm = true;
  Tensor wq, wk, wv, wo;  // width x width
  Tensor log_temperature;  // heads

  static AttentionBlock init(std::size_t width, std::size_t heads, bool qk_norm, std::uint64_t seed);
  std::size_t head_dim() const { return width / heads; }
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

/// Attention output (before any residual connection) for one T x width sequence.
Tensor qk_attention(const AttentionBlock& block, const Tensor& tokens);
/// Pre-softmax logits, heads x T x T.
Tensor attention_logits(const AttentionBlock& block, const Tensor& tokens);

struct AttentionBackward {
  Gradients param_grads;  // aligned with AttentionBlock::parameters()
  Tensor input_grad;      // T x width
};
AttentionBackward qk_attention_backward(const AttentionBlock& block, const Tensor& tokens, const Tensor& output_grad);

struct VelocityNetConfig {
  std::size_t feature_dim = 2;
  int num_classes = 2;
  std::size_t time_dim = 16;
  std::size_t class_dim = 16;
  std::vector<std::size_t> hidden = {128, 128, 128};
  Activation activation = Activation::silu;
  AttentionConfig attention;
  bool zero_init_output = true;
  std::uint64_t seed = 0;
};

/// v_theta(x, t, class): an MLP over [x | time embedding | class embedding].
/// Row `num_classes` of the class table is the learned null class used for
/// classifier-free guidance.
class VelocityNet {
 public:
  static VelocityNet init(const VelocityNetConfig& config);

  const VelocityNetConfig& config() const noexcept { return config_; }
  int null_class() const noexcept { return config_.num_classes; }
  std::size_t feature_dim() const noexcept { return config_.feature_dim; }

  /// Batched prediction; `t` and `classes` hold one entry per row of x.
  Tensor forward(const Tensor& x, std::span<const double> t, std::span<const int> classes) const;
  /// Same prediction with a backward closure producing parameter gradients.
  FieldPass forward_train(const Tensor& x, std::span<const double> t, std::span<const int> classes) const;

  struct FullBackward {
    Gradients param_grads;
    Tensor input_grad;  // n x feature_dim
  };
  /// Forward + backward in one call, including d(output)/d(x) contributions.
  FullBackward gradients(const Tensor& x, std::span<const double> t, std::span<const int> classes,
                         const Tensor& output_grad) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  const Mlp& stem() const { return stem_; }
  const Mlp& head() const { return head_; }
  const std::optional<AttentionBlock>& attention() const { return attention_; }
  const Tensor& class_table() const { return class_table_; }

  /// Rebuild from stored parts (checkpoint loading).
  static VelocityNet from_parts(const VelocityNetConfig& config, Mlp stem, std::optional<AttentionBlock> attention,
                                Mlp head, Tensor class_table);

 private:
  struct Cache;
  Tensor assemble_input(const Tensor& x, std::span<const double> t, std::span<const int> classes) const;
  Tensor run(const Tensor& x, std::span<const double> t, std::span<const int> classes, Cache* cache) const;
  FullBackward run_backward(const Cache& cache, const Tensor& output_grad) const;

  VelocityNetConfig config_;
  Mlp stem_;  // input -> hidden[0], identity output
  std::optional<AttentionBlock> attention_;
  Mlp head_;  // hidden[0] -> ... -> feature_dim
  Tensor class_table_;  // (num_classes + 1) x class_dim
};

enum class LrSchedule { constant, cosine };

LrSchedule lr_schedule_from_string(const std::string& name);
const char* to_string(LrSchedule schedule);
/// Learning rate for iteration `it` of `total`; cosine decays to base * min_ratio.
double scheduled_lr(LrSchedule schedule, double base, double min_ratio, std::size_t it, std::size_t total);

struct TrainConfig {
  std::size_t batch = 256;
  std::size_t iterations = 2000;
  AdamWConfig optimizer{1e-4, 0.9, 0.999, 0.0, 1e-8};
  LrSchedule schedule = LrSchedule::constant;
  double min_lr_ratio = 0.01;
  double label_drop_prob = 0.1;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  TimeWeighting weighting = unit_weighting;
  std::string weighting_name = "unit";
};

struct TrainReport {
  std::vector<double> loss_curve;  // mean loss per logging interval
  std::size_t iterations = 0;
  double final_loss = 0.0;
};

/// Flow-matching training of `net` on fixed (already normalised) features.
/// Each row's class is replaced by the null class with probability
/// label_drop_prob. On a non-finite loss the parameters revert to the last
/// logged snapshot and NumericError is thrown.
TrainReport train_flow(VelocityNet& net, const Tensor& features, std::span<const int> labels,
                       const Interpolant& interp, const TrainConfig& config);

}  // namespace svgl
