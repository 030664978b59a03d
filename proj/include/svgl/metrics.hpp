#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "svgl/tensor.hpp"

namespace svgl {

inline constexpr double kDispersionCap = 1e6;

/// Mean pairwise distance between class centroids over the mean distance of a
/// point to its own class centroid.
double dispersion_score(const Tensor& features, std::span<const int> labels);

struct FieldSample {
  std::vector<double> x;
  int class_id = 0;
  std::vector<double> v;
};

struct CoherenceReport {
  std::map<int, double> coherence;  // (mean pairwise cosine + 1) / 2 per class
  double divergence = 0.0;          // cosine between the first two class-mean directions
  double mean_coherence() const;
};

CoherenceReport velocity_coherence(std::span<const FieldSample> samples);

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  double train_fraction = 0.8;
};

/// Held-out accuracy of a softmax linear classifier on standardised features.
double linear_probe(const Tensor& features, std::span<const int> labels, std::uint64_t split_seed,
                    std::size_t epochs);
double linear_probe(const Tensor& features, std::span<const int> labels, std::uint64_t split_seed,
                    const ProbeConfig& config);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const Tensor& a, const Tensor& b);

struct SsimOptions {
  double sigma = 1.5;
  std::size_t window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over valid window positions, averaged over channels. Images are
/// H x W x C (or H x W).
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});

struct PcaResult {
  Tensor projected;                      // n x k
  Tensor axes;                           // C x k, unit columns
  Tensor mean;                           // C
  std::vector<double> explained_variance;  // per axis
  std::vector<double> explained_ratio;     // per axis, over total variance
};

PcaResult pca_project(const Tensor& features, std::size_t k);

/// Draws n samples with the given step budget and seed.
using BudgetSampler = std::function<Tensor(std::size_t steps, std::size_t n, std::uint64_t seed)>;
/// Draws n reference samples with the given seed.
using TargetSampler = std::function<Tensor(std::size_t n, std::uint64_t seed)>;

struct FewStepGap {
  double sw2_low = 0.0;
  double sw2_high = 0.0;
  double gap = 0.0;
};

/// Both budgets share the noise seed and are scored against one fresh target set.
FewStepGap few_step_gap(const BudgetSampler& generate, const TargetSampler& target, std::size_t steps_low,
                        std::size_t steps_high, std::size_t n, std::uint64_t seed, std::size_t n_proj = 64);

double relative_l2(std::span<const double> value, std::span<const double> reference);

}  // namespace svgl
