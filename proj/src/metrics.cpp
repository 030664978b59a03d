#include "svgl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/Eigenvalues>

#include "svgl/datagen.hpp"
#include "svgl/error.hpp"
#include "svgl/netcore.hpp"
#include "svgl/oracle.hpp"

namespace svgl {

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace

double dispersion_score(const Tensor& features, std::span<const int> labels) {
  const std::size_t n = features.rows(), c = features.cols();
  if (labels.size() != n) throw ShapeError("dispersion needs one label per row");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) throw UsageError("dispersion needs at least two classes");
  std::vector<std::vector<double>> centroids;
  for (const auto& [cls, idx] : members) {
    if (idx.size() < 2) throw UsageError("dispersion needs at least two points per class");
    std::vector<double> m(c, 0.0);
    for (std::size_t i : idx) {
      auto r = features.row(i);
      for (std::size_t j = 0; j < c; ++j) m[j] += r[j];
    }
    for (double& v : m) v /= static_cast<double>(idx.size());
    centroids.push_back(std::move(m));
  }
  double between = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      between += distance(centroids[a], centroids[b]);
      ++pairs;
    }
  }
  between /= static_cast<double>(pairs);
  double within = 0.0;
  std::size_t k = 0;
  for (const auto& [cls, idx] : members) {
    for (std::size_t i : idx) within += distance(features.row(i), centroids[k]);
    ++k;
  }
  within /= static_cast<double>(n);
  return std::min(kDispersionCap, between / std::max(within, 1e-8));
}

double CoherenceReport::mean_coherence() const {
  double acc = 0.0;
  for (const auto& [c, v] : coherence) acc += v;
  return coherence.empty() ? 0.0 : acc / static_cast<double>(coherence.size());
}

CoherenceReport velocity_coherence(std::span<const FieldSample> samples) {
  std::map<int, std::vector<std::vector<double>>> units;
  std::map<int, std::size_t> seen;
  std::size_t d = 0;
  for (const auto& s : samples) {
    ++seen[s.class_id];
    const double nv = norm(s.v);
    if (nv < 1e-12) continue;
    d = s.v.size();
    std::vector<double> u = s.v;
    for (double& x : u) x /= nv;
    units[s.class_id].push_back(std::move(u));
  }
  CoherenceReport report;
  std::vector<std::vector<double>> mean_dirs;
  for (const auto& [cls, count] : seen) {
    if (count < 2) throw UsageError("coherence needs at least two samples per class");
    const auto it = units.find(cls);
    if (it == units.end() || it->second.size() < 2) {
      throw NumericError("class " + std::to_string(cls) + " has too few non-zero velocities");
    }
    const auto& us = it->second;
    // mean pairwise cosine from the norm of the summed unit vectors
    std::vector<double> sum(d, 0.0);
    for (const auto& u : us) {
      for (std::size_t j = 0; j < d; ++j) sum[j] += u[j];
    }
    const double m = static_cast<double>(us.size());
    const double pair_cos = (squared_norm(sum) - m) / (m * (m - 1.0));
    report.coherence[cls] = std::clamp((pair_cos + 1.0) / 2.0, 0.0, 1.0);
    mean_dirs.push_back(std::move(sum));
  }
  if (mean_dirs.size() >= 2) {
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < mean_dirs.size(); ++a) {
      for (std::size_t b = a + 1; b < mean_dirs.size(); ++b) {
        acc += cosine(mean_dirs[a], mean_dirs[b]);
        ++pairs;
      }
    }
    report.divergence = acc / static_cast<double>(pairs);
  }
  return report;
}

double linear_probe(const Tensor& features, std::span<const int> labels, std::uint64_t split_seed,
                    std::size_t epochs) {
  ProbeConfig cfg;
  cfg.epochs = epochs;
  return linear_probe(features, labels, split_seed, cfg);
}

double linear_probe(const Tensor& features, std::span<const int> labels, std::uint64_t split_seed,
                    const ProbeConfig& config) {
  const std::size_t n = features.rows(), c = features.cols();
  if (labels.size() != n) throw ShapeError("probe needs one label per row");
  if (config.epochs == 0 || config.batch == 0) throw ConfigError("probe needs positive epochs and batch");
  const Split split = split_indices(n, config.train_fraction, split_seed);
  std::set<int> train_classes;
  for (std::size_t i : split.train) train_classes.insert(labels[i]);
  if (split.held_out.empty() || train_classes.size() < 2) throw UsageError("probe split is degenerate");
  for (int l : labels) {
    if (l < 0) throw ConfigError("probe labels must be non-negative");
  }
  const std::size_t k = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;

  const Tensor train = features.gather_rows(split.train);
  std::vector<double> mean(c, 0.0), sd(c, 0.0);
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += train.at(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(train.rows());
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) sd[j] += (train.at(i, j) - mean[j]) * (train.at(i, j) - mean[j]);
  }
  for (double& s : sd) s = std::max(1e-8, std::sqrt(s / static_cast<double>(train.rows())));
  auto standardise = [&](Tensor t) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      for (std::size_t j = 0; j < c; ++j) t.at(i, j) = (t.at(i, j) - mean[j]) / sd[j];
    }
    return t;
  };
  const Tensor xs = standardise(train);
  const Tensor xh = standardise(features.gather_rows(split.held_out));

  Mlp probe = Mlp::init({c, k}, Activation::relu, derive_seed(split_seed, 40));
  std::vector<Tensor*> params = probe.parameters();
  AdamWState state = AdamWState::for_parameters(std::vector<const Tensor*>(params.begin(), params.end()),
                                                {config.lr, 0.9, 0.999, config.weight_decay, 1e-8});
  Rng rng(derive_seed(split_seed, 41));
  std::vector<std::size_t> order(xs.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += config.batch) {
      const std::size_t e = std::min(order.size(), b + config.batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(e));
      MlpForward f = probe.forward(xs.gather_rows(idx));
      Tensor g = f.output;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto row = g.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double& v : row) z += (v = std::exp(v - m));
        for (double& v : row) v /= z;
        row[static_cast<std::size_t>(labels[split.train[idx[i]]])] -= 1.0;
        for (double& v : row) v /= static_cast<double>(idx.size());
      }
      adamw_step(params, probe.backward(f.cache, g).param_grads, state);
    }
  }
  const Tensor logits = probe.apply(xh);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xh.rows(); ++i) {
    auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[split.held_out[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(xh.rows());
}

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) throw ShapeError("psnr of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("ssim expects H x W or H x W x C images");
  const std::size_t h = a.extent(0), w = a.extent(1), ch = a.rank() == 3 ? a.extent(2) : 1;
  const std::size_t win = options.window;
  if (win == 0 || h < win || w < win) throw ShapeError("image is smaller than the SSIM window");
  std::vector<double> g(win);
  double total = 0.0;
  const double half = static_cast<double>(win - 1) / 2.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double x = static_cast<double>(i) - half;
    g[i] = std::exp(-0.5 * x * x / (options.sigma * options.sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  const double c1 = options.k1 * options.k1, c2 = options.k2 * options.k2;

  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < ch; ++c) {
    auto px = [&](const Tensor& t, std::size_t r, std::size_t q) { return t[(r * w + q) * ch + c]; };
    for (std::size_t r0 = 0; r0 + win <= h; ++r0) {
      for (std::size_t q0 = 0; q0 + win <= w; ++q0) {
        double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < win; ++i) {
          for (std::size_t j = 0; j < win; ++j) {
            const double wt = g[i] * g[j];
            const double x = px(a, r0 + i, q0 + j), y = px(b, r0 + i, q0 + j);
            mx += wt * x;
            my += wt * y;
            sxx += wt * x * x;
            syy += wt * y * y;
            sxy += wt * x * y;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

PcaResult pca_project(const Tensor& features, std::size_t k) {
  const std::size_t n = features.rows(), c = features.cols();
  if (k < 1 || k > c || n <= k) throw ConfigError("pca needs n > k >= 1 and k <= channels");
  const auto x = features.matrix();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMatrix centred = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca eigen-decomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues();
  const Eigen::MatrixXd vectors = solver.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) total += std::max(0.0, values[i]);

  PcaResult r;
  r.mean = Tensor({c});
  for (std::size_t j = 0; j < c; ++j) r.mean[j] = mean[static_cast<Eigen::Index>(j)];
  r.axes = Tensor({c, k});
  for (std::size_t a = 0; a < k; ++a) {
    const Eigen::Index src = static_cast<Eigen::Index>(c - 1 - a);
    Eigen::VectorXd axis = vectors.col(src);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis[arg] < 0.0) axis = -axis;
    for (std::size_t j = 0; j < c; ++j) r.axes.at(j, a) = axis[static_cast<Eigen::Index>(j)];
    const double var = std::max(0.0, values[src]);
    r.explained_variance.push_back(var);
    r.explained_ratio.push_back(total > 0.0 ? var / total : 0.0);
  }
  r.projected = Tensor({n, k});
  r.projected.matrix() = centred * r.axes.matrix();
  return r;
}

FewStepGap few_step_gap(const BudgetSampler& generate, const TargetSampler& target, std::size_t steps_low,
                        std::size_t steps_high, std::size_t n, std::uint64_t seed, std::size_t n_proj) {
  if (steps_low > steps_high) throw ConfigError("few_step_gap needs steps_low <= steps_high");
  const std::uint64_t noise_seed = derive_seed(seed, 1);
  const Tensor ref = target(n, derive_seed(seed, 2));
  const std::uint64_t proj_seed = derive_seed(seed, 3);
  FewStepGap g;
  g.sw2_low = sliced_wasserstein(generate(steps_low, n, noise_seed), ref, n_proj, proj_seed);
  g.sw2_high = steps_high == steps_low ? g.sw2_low
                                       : sliced_wasserstein(generate(steps_high, n, noise_seed), ref, n_proj, proj_seed);
  g.gap = g.sw2_low - g.sw2_high;
  return g;
}

double relative_l2(std::span<const double> value, std::span<const double> reference) {
  if (value.size() != reference.size()) throw ShapeError("relative_l2 size mismatch");
  double num = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) num += (value[i] - reference[i]) * (value[i] - reference[i]);
  const double den = squared_norm(reference);
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

}  // namespace svgl
