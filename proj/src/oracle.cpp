#include "svgl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svgl {

namespace {

void require_open_time(double t) {
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("oracle time must lie strictly inside (0, 1)");
}

Tensor as_rows(const Tensor& x, std::size_t d) {
  if (x.empty() || x.cols() != d) throw ShapeError("query width does not match the mixture dimension");
  return x.rank() == 2 ? x : x.reshaped({x.rows(), d});
}

void velocity_row(const MixtureSpec& spec, std::span<const double> x, double t, std::span<double> out,
                  std::vector<double>& logr) {
  const std::size_t d = x.size();
  const double a = 1.0 - t;
  const auto& comps = spec.components;
  logr.resize(comps.size());
  double best = -INFINITY;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const double s2 = a * a * comps[i].var + t * t;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = x[j] - a * comps[i].mean[j];
      sq += r * r;
    }
    logr[i] = std::log(comps[i].weight) - 0.5 * static_cast<double>(d) * std::log(s2) - 0.5 * sq / s2;
    best = std::max(best, logr[i]);
  }
  double total = 0.0;
  for (double& l : logr) {
    l = std::exp(l - best);
    total += l;
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const double r = logr[i] / total;
    if (r == 0.0) continue;
    const double s2 = a * a * comps[i].var + t * t;
    const double gain = a * comps[i].var / s2;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += r * (comps[i].mean[j] + gain * (x[j] - a * comps[i].mean[j]));
    }
  }
  for (std::size_t j = 0; j < d; ++j) out[j] = (x[j] - out[j]) / t;
}

std::vector<double> one_dim_sorted(const Tensor& pts, std::span<const double> dir) {
  std::vector<double> out(pts.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot(pts.row(i), dir);
  std::sort(out.begin(), out.end());
  return out;
}

// Squared W2 between two sorted empirical measures with uniform weights.
double w2_squared_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double pos = 0.0, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next = std::min(static_cast<double>(i + 1) / na, static_cast<double>(j + 1) / nb);
    const double diff = a[i] - b[j];
    acc += (next - pos) * diff * diff;
    pos = next;
    if (static_cast<double>(i + 1) / na <= next) ++i;
    if (static_cast<double>(j + 1) / nb <= next) ++j;
  }
  return acc;
}

}  // namespace

Tensor oracle_velocity(const MixtureSpec& spec, const Tensor& x, double t) {
  require_open_time(t);
  spec.validate();
  const std::size_t d = spec.dim();
  const Tensor rows = as_rows(x, d);
  Tensor out(rows.shape());
  std::vector<double> scratch;
  for (std::size_t i = 0; i < rows.rows(); ++i) velocity_row(spec, rows.row(i), t, out.row(i), scratch);
  return x.rank() == 2 ? out : out.reshaped(x.shape());
}

Tensor mc_velocity(const MixtureSpec& spec, const Tensor& x, double t, std::size_t n, std::uint64_t seed) {
  require_open_time(t);
  if (n < 1000) throw ConfigError("Monte-Carlo velocity needs at least 1000 draws");
  const std::size_t d = spec.dim();
  if (x.size() != d) throw ShapeError("Monte-Carlo velocity takes a single point");
  const LabeledPoints prior = sample_mixture(spec, n, seed);
  const double a = 1.0 - t;
  std::vector<double> logw(n);
  double best = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    auto x0 = prior.points.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = x[j] - a * x0[j];
      sq += r * r;
    }
    logw[i] = -0.5 * sq / (t * t);
    best = std::max(best, logw[i]);
  }
  double sw = 0.0, sw2 = 0.0;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(logw[i] - best);
    sw += w;
    sw2 += w * w;
    auto x0 = prior.points.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += w * (x[j] - x0[j]) / t;
  }
  const double ess = sw * sw / sw2;
  if (!(ess >= 10.0)) throw NumericError("Monte-Carlo velocity estimate is unreliable (effective sample size " +
                                         std::to_string(ess) + ")");
  Tensor out(x.shape());
  for (std::size_t j = 0; j < d; ++j) out[j] = mean[j] / sw;
  return out;
}

VelocityField oracle_field(const MixtureSpec& spec, bool class_conditional, double delta) {
  spec.validate();
  std::vector<MixtureSpec> per_class;
  if (class_conditional) {
    for (int c = 0; c < spec.num_classes(); ++c) per_class.push_back(spec.class_conditional(c));
  }
  return [spec, per_class, delta](const Tensor& x, double t, std::span<const int> classes) {
    const double tc = std::clamp(t, delta, 1.0 - delta);
    const std::size_t d = spec.dim();
    const Tensor rows = as_rows(x, d);
    Tensor out(rows.shape());
    std::vector<double> scratch;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      const MixtureSpec* s = &spec;
      if (!per_class.empty() && i < classes.size() && classes[i] >= 0 &&
          classes[i] < static_cast<int>(per_class.size())) {
        s = &per_class[static_cast<std::size_t>(classes[i])];
      }
      velocity_row(*s, rows.row(i), tc, out.row(i), scratch);
    }
    return x.rank() == 2 ? out : out.reshaped(x.shape());
  };
}

Tensor oracle_sample(const VelocityField& field, const Tensor& noise, std::span<const int> classes,
                     std::size_t steps, double delta) {
  if (steps < 1) throw ConfigError("oracle sampling needs at least one step");
  std::vector<double> grid(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    grid[k] = (1.0 - delta) - (1.0 - 2.0 * delta) * static_cast<double>(k) / static_cast<double>(steps);
  }
  grid.back() = delta;
  SampleResult r = integrate(field, grid, noise, classes, false, false);
  Tensor v = field(r.x, delta, classes);
  for (std::size_t i = 0; i < r.x.size(); ++i) r.x[i] -= delta * v[i];
  return r.x;
}

Tensor oracle_sample(const MixtureSpec& spec, const Tensor& noise, std::size_t steps) {
  const std::vector<int> none(noise.rows(), -1);
  return oracle_sample(oracle_field(spec, false), noise, none, steps);
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_proj, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw UsageError("sliced Wasserstein needs non-empty sets");
  if (a.cols() != b.cols()) throw ShapeError("sliced Wasserstein sets differ in dimension");
  if (n_proj == 0) throw ConfigError("sliced Wasserstein needs at least one projection");
  const std::size_t d = a.cols();
  Rng rng(seed);
  double total = 0.0;
  std::vector<double> dir(d);
  for (std::size_t p = 0; p < n_proj; ++p) {
    double nrm = 0.0;
    while (nrm < 1e-12) {
      for (double& v : dir) v = standard_normal(rng);
      nrm = norm(dir);
    }
    for (double& v : dir) v /= nrm;
    total += std::sqrt(w2_squared_sorted(one_dim_sorted(a, dir), one_dim_sorted(b, dir)));
  }
  return total / static_cast<double>(n_proj);
}

double mmd(const Tensor& a, const Tensor& b, double bandwidth) {
  if (a.rows() < 2 || b.rows() < 2) throw UsageError("MMD needs at least two points per set");
  if (a.cols() != b.cols()) throw ShapeError("MMD sets differ in dimension");
  if (!(bandwidth > 0.0)) throw ConfigError("MMD bandwidth must be positive");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  auto kernel = [&](std::span<const double> x, std::span<const double> y) {
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - y[j]) * (x[j] - y[j]);
    return std::exp(-sq * inv);
  };
  const std::size_t m = a.rows(), n = b.rows();
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) kxx += kernel(a.row(i), a.row(j));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) kyy += kernel(b.row(i), b.row(j));
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) kxy += kernel(a.row(i), b.row(j));
  }
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  const double value = 2.0 * kxx / (md * (md - 1.0)) + 2.0 * kyy / (nd * (nd - 1.0)) - 2.0 * kxy / (md * nd);
  return std::max(0.0, value);
}

NoiseFloor summarize_floor(std::vector<double> draws) {
  NoiseFloor f;
  f.draws = std::move(draws);
  if (f.draws.empty()) return f;
  f.mean = std::accumulate(f.draws.begin(), f.draws.end(), 0.0) / static_cast<double>(f.draws.size());
  double var = 0.0;
  for (double v : f.draws) var += (v - f.mean) * (v - f.mean);
  f.stddev = f.draws.size() > 1 ? std::sqrt(var / static_cast<double>(f.draws.size() - 1)) : 0.0;
  return f;
}

NoiseFloor sw2_noise_floor(const MixtureSpec& spec, std::size_t n, std::size_t resamples, std::size_t n_proj,
                           std::uint64_t seed) {
  std::vector<double> draws;
  for (std::size_t r = 0; r < resamples; ++r) {
    const LabeledPoints a = sample_mixture(spec, n, derive_seed(seed, 2 * r));
    const LabeledPoints b = sample_mixture(spec, n, derive_seed(seed, 2 * r + 1));
    draws.push_back(sliced_wasserstein(a.points, b.points, n_proj, derive_seed(seed, 1000 + r)));
  }
  return summarize_floor(std::move(draws));
}

}  // namespace svgl
