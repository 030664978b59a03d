#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>

#include "svgl/checkpoint.hpp"
#include "svgl/datagen.hpp"
#include "svgl/editing.hpp"
#include "svgl/flowmodel.hpp"
#include "svgl/latentspace.hpp"
#include "svgl/metrics.hpp"
#include "svgl/oracle.hpp"
#include "svgl/sampler.hpp"

using namespace svgl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// shared fixtures

struct ShapesLab {
  ShapeImageDataset train, held;
  SemanticEncoder semantic;
  SvgCodec aligned, semantic_only, unaligned;
  double codec_seconds = 0.0;
};

const ShapesLab& shapes_lab() {
  static const ShapesLab lab = [] {
    ShapesLab l;
    l.train = gen_shapes(2000, 4, 16, 1);
    l.held = gen_shapes(500, 4, 16, 2);
    l.semantic = pretrain_semantic(l.train, SemanticConfig{}, 3);
    const auto start = Clock::now();
    auto make = [&](std::size_t residual, double align) {
      CodecConfig c;
      c.residual_width = residual;
      c.align_weight = align;
      SvgCodec codec = SvgCodec::create(l.semantic, c, 7);
      train_codec_stage1(codec, l.train, 7);
      return codec;
    };
    l.aligned = make(8, CodecConfig{}.align_weight);
    l.semantic_only = make(0, CodecConfig{}.align_weight);
    l.unaligned = make(8, 0.0);
    l.codec_seconds = seconds_since(start);
    return l;
  }();
  return lab;
}

TrainConfig flow_train_config(std::size_t iterations, std::uint64_t seed) {
  TrainConfig tc;
  tc.batch = 256;
  tc.iterations = iterations;
  tc.optimizer.lr = 1e-3;
  tc.schedule = LrSchedule::cosine;
  tc.min_lr_ratio = 0.01;
  tc.label_drop_prob = 0.1;
  tc.log_every = 500;
  tc.seed = seed;
  return tc;
}

VelocityNet train_codec_flow(const SvgCodec& codec, const ShapeImageDataset& ds) {
  const Tensor features = normalize(svg_encode(codec, ds.images), codec.stats);
  VelocityNetConfig nc;
  nc.feature_dim = features.cols();
  nc.num_classes = static_cast<int>(ds.config.classes);
  nc.hidden = {256, 256, 256};
  nc.seed = 40;
  VelocityNet net = VelocityNet::init(nc);
  train_flow(net, features, ds.labels, Interpolant{}, flow_train_config(4000, 41));
  return net;
}

const VelocityNet& aligned_flow() {
  static const VelocityNet net = train_codec_flow(shapes_lab().aligned, shapes_lab().train);
  return net;
}

const VelocityNet& unaligned_flow() {
  static const VelocityNet net = train_codec_flow(shapes_lab().unaligned, shapes_lab().train);
  return net;
}

struct MixtureLab {
  MixtureSpec spec;
  VelocityNet net;
  double train_seconds = 0.0;
};

MixtureLab train_mixture_net(MixturePreset preset) {
  MixtureLab lab;
  lab.spec = make_mixture(preset, 2, 0);
  const LabeledPoints data = sample_mixture(lab.spec, 20000, 11);
  VelocityNetConfig nc;
  nc.hidden = {128, 128, 128};
  nc.seed = 5;
  lab.net = VelocityNet::init(nc);
  const auto start = Clock::now();
  train_flow(lab.net, data.points, data.labels, Interpolant{}, flow_train_config(10000, 9));
  lab.train_seconds = seconds_since(start);
  return lab;
}

const MixtureLab& mixture_lab(MixturePreset preset) {
  static const MixtureLab dispersed = train_mixture_net(MixturePreset::dispersed);
  static const MixtureLab entangled = train_mixture_net(MixturePreset::entangled);
  return preset == MixturePreset::dispersed ? dispersed : entangled;
}

std::vector<int> random_classes(std::size_t n, int classes, Rng& rng) {
  std::vector<int> out(n);
  std::uniform_int_distribution<int> d(0, classes - 1);
  for (int& c : out) c = d(rng);
  return out;
}

BudgetSampler net_sampler(const VelocityNet& net) {
  return [&net](std::size_t steps, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    const Tensor z = normal_tensor({n, net.feature_dim()}, rng);
    const std::vector<int> cls = random_classes(n, net.config().num_classes, rng);
    SamplerConfig sc;
    sc.steps = steps;
    sc.guidance = 1.0;
    return euler_sample(net, sc, z, cls).x;
  };
}

BudgetSampler oracle_sampler(const MixtureSpec& spec) {
  const VelocityField field = oracle_field(spec, true);
  const int classes = spec.num_classes();
  return [field, classes](std::size_t steps, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    const Tensor z = normal_tensor({n, 2}, rng);
    const std::vector<int> cls = random_classes(n, classes, rng);
    return oracle_sample(field, z, cls, steps);
  };
}

TargetSampler mixture_target(const MixtureSpec& spec) {
  return [spec](std::size_t n, std::uint64_t seed) { return sample_mixture(spec, n, seed).points; };
}

// ---------------------------------------------------------------------------
// AC1

double mlp_check(const Mlp& net, std::size_t batch, std::uint64_t seed, bool nonnegative_input) {
  Rng rng(seed);
  Tensor x = normal_tensor({batch, net.input_width()}, rng);
  if (nonnegative_input) {
    for (double& v : x.values()) v = uniform01(rng);
  }
  const Tensor r = normal_tensor({batch, net.output_width()}, rng);
  auto scalar = [&](const Tensor& out) {
    double v = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) v += out[i] * r[i];
    return v;
  };
  Mlp m = net;
  bool first = true;
  auto params = [&](const Tensor& flat) {
    unflatten_parameters(flat, m.parameters());
    const MlpForward f = m.forward(x);
    Tensor grad = first ? flatten_gradients(m.backward(f.cache, r).param_grads) : Tensor();
    first = false;
    return ScalarEvaluation{Tensor::vector({scalar(f.output)}), std::move(grad)};
  };
  auto inputs = [&](const Tensor& point) {
    const MlpForward f = net.forward(point);
    Tensor grad = first ? net.backward(f.cache, r).input_grad : Tensor();
    first = false;
    return ScalarEvaluation{Tensor::vector({scalar(f.output)}), std::move(grad)};
  };
  const GradCheckOptions opt{256, seed};
  const double e_params = grad_check(params, flatten_parameters(net.parameters()), 1e-5, opt);
  first = true;
  return std::max(e_params, grad_check(inputs, x, 1e-5, opt));
}

double velocity_check(const VelocityNet& net, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x = normal_tensor({batch, net.feature_dim()}, rng);
  std::vector<double> t(batch);
  for (double& v : t) v = uniform01(rng);
  std::vector<int> cls = random_classes(batch, net.config().num_classes + 1, rng);
  const Tensor r = normal_tensor({batch, net.feature_dim()}, rng);
  auto scalar = [&](const Tensor& out) {
    double v = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) v += out[i] * r[i];
    return v;
  };
  VelocityNet m = net;
  bool first = true;
  auto params = [&](const Tensor& flat) {
    unflatten_parameters(flat, m.parameters());
    Tensor grad = first ? flatten_gradients(m.gradients(x, t, cls, r).param_grads) : Tensor();
    first = false;
    return ScalarEvaluation{Tensor::vector({scalar(m.forward(x, t, cls))}), std::move(grad)};
  };
  auto inputs = [&](const Tensor& point) {
    Tensor grad = first ? net.gradients(point, t, cls, r).input_grad : Tensor();
    first = false;
    return ScalarEvaluation{Tensor::vector({scalar(net.forward(point, t, cls))}), std::move(grad)};
  };
  const GradCheckOptions opt{256, seed};
  const double e_params = grad_check(params, flatten_parameters(std::as_const(net).parameters()), 1e-5, opt);
  first = true;
  return std::max(e_params, grad_check(inputs, x, 1e-5, opt));
}

Outcome ac1_gradients() {
  const auto start = Clock::now();
  const std::size_t pixels = 16 * 16 * 3;
  const SemanticConfig sc;
  const CodecConfig cc;
  const BaselineConfig bc;
  auto with_ends = [](std::size_t in, std::vector<std::size_t> hidden, std::size_t out) {
    hidden.insert(hidden.begin(), in);
    hidden.push_back(out);
    return hidden;
  };
  std::vector<std::pair<std::string, Mlp>> mlps = {
      {"semantic", Mlp::init(with_ends(pixels, sc.hidden, sc.width), Activation::relu, 1)},
      {"semantic-head", Mlp::init({sc.width, 4}, Activation::relu, 2)},
      {"residual", Mlp::init(with_ends(pixels, cc.residual_hidden, cc.residual_width), Activation::relu, 3)},
      {"decoder", Mlp::init(with_ends(sc.width + cc.residual_width, cc.decoder_hidden, pixels), Activation::relu, 4)},
      {"baseline-enc", Mlp::init(with_ends(pixels, bc.hidden, 2 * bc.latent_width), Activation::relu, 5)},
      {"baseline-dec", Mlp::init(with_ends(bc.latent_width, bc.decoder_hidden, pixels), Activation::relu, 6)},
  };
  std::vector<std::pair<std::string, VelocityNetConfig>> nets;
  for (std::size_t dim : {std::size_t{2}, std::size_t{40}}) {
    for (int variant = 0; variant < 3; ++variant) {
      VelocityNetConfig c;
      c.feature_dim = dim;
      c.num_classes = dim == 2 ? 2 : 4;
      c.hidden = dim == 2 ? std::vector<std::size_t>{128, 128, 128} : std::vector<std::size_t>{256, 256, 256};
      c.zero_init_output = false;
      c.attention = {variant > 0, 4, 2, variant == 1};
      c.seed = 10 + variant;
      const char* names[] = {"plain", "attn+qknorm", "attn"};
      nets.emplace_back("velocity-d" + std::to_string(dim) + "-" + names[variant], c);
    }
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, net] : mlps) {
    for (std::uint64_t p = 0; p < 10; ++p) {
      const double e = mlp_check(net, 2, 100 + p, name != "semantic-head" && name != "decoder" &&
                                                      name != "baseline-dec");
      if (e > worst) worst = e, worst_name = name;
    }
  }
  for (const auto& [name, cfg] : nets) {
    const VelocityNet net = VelocityNet::init(cfg);
    for (std::uint64_t p = 0; p < 10; ++p) {
      const double e = velocity_check(net, 2, 200 + p);
      if (e > worst) worst = e, worst_name = name;
    }
  }
  const double secs = seconds_since(start);
  const std::size_t count = mlps.size() + nets.size();
  return {worst < 1e-4 && secs < 60.0, std::to_string(count) + " architectures x 10 points, max rel err " +
                                           fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------
// AC2

Outcome ac2_oracle_vs_mc() {
  const auto start = Clock::now();
  bool pass = true;
  std::string detail;
  double worst_stacked = 0.0, worst_point = 0.0;
  for (auto preset : {MixturePreset::dispersed, MixturePreset::entangled}) {
    const MixtureSpec base = make_mixture(preset, 2, 0);
    for (int field = -1; field < base.num_classes(); ++field) {
      const MixtureSpec spec = field < 0 ? base : base.class_conditional(field);
      Rng rng(derive_seed(static_cast<std::uint64_t>(preset) * 10 + static_cast<std::uint64_t>(field + 1), 2));
      std::vector<double> exact, mc;
      for (int i = 0; i < 20; ++i) {
        const double t = 0.05 + 0.9 * uniform01(rng);
        const LabeledPoints x0 = sample_mixture(spec, 1, rng());
        Tensor x({2});
        for (std::size_t d = 0; d < 2; ++d) x[d] = (1.0 - t) * x0.points[d] + t * standard_normal(rng);
        const Tensor a = oracle_velocity(spec, x, t);
        const Tensor b = mc_velocity(spec, x, t, 200000, rng());
        worst_point = std::max(worst_point, relative_l2(b.data(), a.data()));
        exact.insert(exact.end(), a.values().begin(), a.values().end());
        mc.insert(mc.end(), b.values().begin(), b.values().end());
      }
      const double stacked = relative_l2(mc, exact);
      worst_stacked = std::max(worst_stacked, stacked);
      if (!(stacked <= 0.02)) pass = false;
    }
  }
  const double secs = seconds_since(start);
  detail = "stacked rel L2 max " + fmt("%.4f", worst_stacked) + " over 6 fields x 20 points (pointwise max " +
           fmt("%.4f", worst_point) + "), " + fmt("%.1f s", secs);
  return {pass && secs < 120.0, detail};
}

// ---------------------------------------------------------------------------
// AC3

Outcome ac3_solver_order() {
  bool pass = true;
  std::string detail = "mean error ratios";
  for (auto preset : {MixturePreset::dispersed, MixturePreset::entangled}) {
    const MixtureSpec spec = make_mixture(preset, 2, 0);
    const VelocityField field = oracle_field(spec, true);
    Rng rng(31);
    const Tensor z = normal_tensor({64, 2}, rng);
    const std::vector<int> cls = random_classes(64, spec.num_classes(), rng);
    auto endpoint = [&](std::size_t steps) {
      SamplerConfig sc;
      sc.steps = steps;
      return euler_sample(field, sc, z, cls).x;
    };
    const Tensor ref = endpoint(512);
    std::vector<std::vector<double>> errs;
    for (std::size_t steps : {8u, 16u, 32u, 64u}) {
      const Tensor x = endpoint(steps);
      std::vector<double> e(64);
      for (std::size_t i = 0; i < 64; ++i) e[i] = std::hypot(x.at(i, 0) - ref.at(i, 0), x.at(i, 1) - ref.at(i, 1));
      errs.push_back(std::move(e));
    }
    detail += std::string(" ") + to_string(preset) + ":";
    for (std::size_t k = 0; k + 1 < errs.size(); ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 64; ++i) mean += errs[k][i] / errs[k + 1][i] / 64.0;
      detail += fmt(" %.3f", mean);
      if (!(mean >= 1.5 && mean <= 2.5)) pass = false;
    }
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// AC4

Outcome ac4_dispersion_gap() {
  const auto start = Clock::now();
  const MixtureSpec disp = make_mixture(MixturePreset::dispersed, 2, 0);
  const MixtureSpec ent = make_mixture(MixturePreset::entangled, 2, 0);
  const NoiseFloor floor = sw2_noise_floor(disp, 10000, 20, 64, 77);
  const FewStepGap od = few_step_gap(oracle_sampler(disp), mixture_target(disp), 5, 100, 10000, 3);
  const FewStepGap oe = few_step_gap(oracle_sampler(ent), mixture_target(ent), 5, 100, 10000, 3);
  const MixtureLab& ld = mixture_lab(MixturePreset::dispersed);
  const MixtureLab& le = mixture_lab(MixturePreset::entangled);
  const FewStepGap nd = few_step_gap(net_sampler(ld.net), mixture_target(disp), 5, 100, 10000, 3);
  const FewStepGap ne = few_step_gap(net_sampler(le.net), mixture_target(ent), 5, 100, 10000, 3);
  const double secs = seconds_since(start);
  const bool oracle_ok = oe.gap >= 1.5 * od.gap;
  const bool net_ok = ne.gap >= 1.5 * nd.gap;
  const std::string detail = "oracle gaps " + fmt("%.4f", oe.gap) + " vs " + fmt("%.4f", od.gap) + " (ratio " +
                             fmt("%.2f", oe.gap / od.gap) + "), trained gaps " + fmt("%.4f", ne.gap) + " vs " +
                             fmt("%.4f", nd.gap) + " (ratio " + fmt("%.2f", ne.gap / nd.gap) + "), floor sd " +
                             fmt("%.4f", floor.stddev) + ", " + fmt("%.1f s", secs);
  return {oracle_ok && net_ok && secs < 600.0, detail};
}

// ---------------------------------------------------------------------------
// AC5

Outcome ac5_coherence() {
  const double t = 0.5;
  Tensor grid({21 * 21, 2});
  for (std::size_t i = 0; i < 21; ++i) {
    for (std::size_t j = 0; j < 21; ++j) {
      grid.at(i * 21 + j, 0) = -6.0 + 0.6 * static_cast<double>(i);
      grid.at(i * 21 + j, 1) = -6.0 + 0.6 * static_cast<double>(j);
    }
  }
  auto report = [&](const MixtureSpec& spec) {
    const VelocityField f = oracle_field(spec, true);
    std::vector<FieldSample> samples;
    for (int k = 0; k < spec.num_classes(); ++k) {
      const Tensor v = f(grid, t, std::vector<int>(grid.rows(), k));
      for (std::size_t i = 0; i < grid.rows(); ++i) {
        samples.push_back({{grid.at(i, 0), grid.at(i, 1)}, k, {v.at(i, 0), v.at(i, 1)}});
      }
    }
    return velocity_coherence(samples);
  };
  const MixtureSpec disp = make_mixture(MixturePreset::dispersed, 2, 0);
  const MixtureSpec ent = make_mixture(MixturePreset::entangled, 2, 0);
  const CoherenceReport rd = report(disp), re = report(ent);
  const VelocityField f = oracle_field(disp, true);
  double worst_cos = -1.0;
  for (int k = 0; k < 2; ++k) {
    const std::vector<double> c = disp.class_centroid(k);
    const Tensor x = Tensor::matrix({{c[0], c[1]}, {c[0], c[1]}});
    const Tensor v = f(x, t, std::vector<int>{0, 1});
    const double cos = dot(v.row(0), v.row(1)) / (norm(v.row(0)) * norm(v.row(1)));
    worst_cos = std::max(worst_cos, cos);
  }
  const bool pass = rd.mean_coherence() > re.mean_coherence() && worst_cos < -0.9;
  return {pass, "coherence dispersed " + fmt("%.3f", rd.mean_coherence()) + " vs entangled " +
                    fmt("%.3f", re.mean_coherence()) + ", centroid cosines <= " + fmt("%.3f", worst_cos) +
                    ", grid class-mean cosine " + fmt("%.3f", rd.divergence)};
}

// ---------------------------------------------------------------------------
// AC6, AC7, AC8

double held_psnr(const SvgCodec& codec, const ShapeImageDataset& held) {
  return psnr(decode(codec, svg_encode(codec, held.images)), held.images);
}

Outcome ac6_residual_value() {
  const ShapesLab& lab = shapes_lab();
  const double full = held_psnr(lab.aligned, lab.held), sem = held_psnr(lab.semantic_only, lab.held);
  const double training = lab.codec_seconds * 2.0 / 3.0;
  return {full - sem >= 3.0 && training < 900.0,
          "held-out PSNR " + fmt("%.2f", full) + " dB vs semantic-only " + fmt("%.2f", sem) + " dB (" +
              fmt("%+.2f dB", full - sem) + "), training " + fmt("%.1f s", training)};
}

Outcome ac7_alignment_value() {
  const ShapesLab& lab = shapes_lab();
  const double d_aligned = dispersion_score(svg_encode(lab.aligned, lab.train.images), lab.train.labels);
  const double d_sem = dispersion_score(lab.semantic.encode(lab.train.images), lab.train.labels);
  const double d_unaligned = dispersion_score(svg_encode(lab.unaligned, lab.train.images), lab.train.labels);

  auto five_step = [&](const SvgCodec& codec, const VelocityNet& net) {
    const Tensor target = normalize(svg_encode(codec, lab.held.images), codec.stats);
    Rng rng(55);
    const Tensor z = normal_tensor(target.shape(), rng);
    SamplerConfig sc;
    sc.steps = 5;
    sc.guidance = 1.0;
    return sliced_wasserstein(euler_sample(net, sc, z, lab.held.labels).x, target, 64, 56);
  };
  const double sw_aligned = five_step(lab.aligned, aligned_flow());
  const double sw_unaligned = five_step(lab.unaligned, unaligned_flow());

  const bool ratio_ok = d_aligned >= 0.9 * d_sem;
  const bool paired_ok = d_aligned > d_unaligned;
  const bool flow_ok = sw_aligned <= sw_unaligned;
  return {ratio_ok && paired_ok && flow_ok,
          "dispersion aligned " + fmt("%.3f", d_aligned) + " / semantic " + fmt("%.3f", d_sem) + " = " +
              fmt("%.3f", d_aligned / d_sem) + (ratio_ok ? " (>= 0.9)" : " (< 0.9)") + ", unaligned " +
              fmt("%.3f", d_unaligned) + (paired_ok ? " (aligned higher)" : " (aligned not higher)") +
              ", 5-step SW2 aligned " + fmt("%.4f", sw_aligned) + " vs unaligned " + fmt("%.4f", sw_unaligned)};
}

Outcome ac8_probe() {
  const ShapesLab& lab = shapes_lab();
  const double svg = linear_probe(svg_encode(lab.aligned, lab.held.images), lab.held.labels, 5, 100);
  const double sem = linear_probe(lab.semantic.encode(lab.held.images), lab.held.labels, 5, 100);
  return {std::abs(svg - sem) <= 0.02,
          "probe SVG " + fmt("%.3f", svg) + " vs semantic " + fmt("%.3f", sem) + " (diff " +
              fmt("%+.3f", svg - sem) + ")"};
}

// ---------------------------------------------------------------------------
// AC9

inline constexpr double kGridMseThreshold = 0.05;

Outcome ac9_fidelity() {
  const MixtureLab& lab = mixture_lab(MixturePreset::dispersed);
  const MixtureSpec& spec = lab.spec;
  const VelocityField oracle = oracle_field(spec, true);
  Tensor grid({41 * 41, 2});
  for (std::size_t i = 0; i < 41; ++i) {
    for (std::size_t j = 0; j < 41; ++j) {
      grid.at(i * 41 + j, 0) = -6.0 + 0.3 * static_cast<double>(i);
      grid.at(i * 41 + j, 1) = -4.0 + 0.2 * static_cast<double>(j);
    }
  }
  double se = 0.0, wsum = 0.0;
  for (int step = 1; step <= 9; ++step) {
    const double t = 0.1 * step;
    for (int k = 0; k < spec.num_classes(); ++k) {
      const std::vector<int> cls(grid.rows(), k);
      const Tensor vo = oracle(grid, t, cls);
      const Tensor vn = lab.net.forward(grid, std::vector<double>(grid.rows(), t), cls);
      const MixtureSpec sub = spec.class_conditional(k);
      for (std::size_t r = 0; r < grid.rows(); ++r) {
        double p = 0.0;
        for (const auto& c : sub.components) {
          const double s2 = (1 - t) * (1 - t) * c.var + t * t;
          double q = 0.0;
          for (std::size_t d = 0; d < 2; ++d) q += std::pow(grid.at(r, d) - (1 - t) * c.mean[d], 2);
          p += c.weight * std::exp(-0.5 * q / s2) / s2;
        }
        double e = 0.0;
        for (std::size_t d = 0; d < 2; ++d) e += std::pow(vo.at(r, d) - vn.at(r, d), 2);
        se += p * e;
        wsum += p;
      }
    }
  }
  const double mse = se / wsum;
  const NoiseFloor floor = sw2_noise_floor(spec, 10000, 20, 64, 77);
  const Tensor samples = net_sampler(lab.net)(100, 10000, 901);
  const double sw = sliced_wasserstein(samples, sample_mixture(spec, 10000, 902).points, 64, 903);
  return {mse < kGridMseThreshold && sw <= 1.5 * floor.mean,
          "density-weighted grid MSE " + fmt("%.4f", mse) + " (threshold " + fmt("%.2f", kGridMseThreshold) +
              "), 100-step SW2 " + fmt("%.4f", sw) + " vs 1.5 x floor " + fmt("%.4f", 1.5 * floor.mean)};
}

// ---------------------------------------------------------------------------
// AC10

Outcome ac10_sampler_algebra() {
  VelocityNetConfig c;
  c.feature_dim = 40;
  c.num_classes = 4;
  c.hidden = {64, 64};
  c.attention.enabled = true;
  c.zero_init_output = false;
  c.seed = 3;
  const VelocityNet net = VelocityNet::init(c);
  Rng rng(4);
  const Tensor x = normal_tensor({8, 40}, rng);
  const std::vector<int> cls = random_classes(8, 4, rng);
  const std::vector<double> ts(8, 0.37);

  const Tensor v0 = cfg_velocity(net, x, 0.37, cls, 0.0);
  const Tensor v1 = cfg_velocity(net, x, 0.37, cls, 1.0);
  double affinity = 0.0;
  for (double w : {0.5, 1.55, 2.0, 4.0, 7.5}) {
    const Tensor vw = cfg_velocity(net, x, 0.37, cls, w);
    for (std::size_t i = 0; i < vw.size(); ++i) {
      const double expect = v0[i] + w * (v1[i] - v0[i]);
      affinity = std::max(affinity, std::abs(vw[i] - expect) / std::max(1.0, std::abs(expect)));
    }
  }
  const bool conditional = v1 == net.forward(x, ts, cls);

  SamplerConfig sc;
  sc.steps = 1;
  sc.zero_init = true;
  const SampleResult id = euler_sample(net, sc, x, cls);
  const bool identity = id.x == x && id.nfe == 0;

  double slerp_err = 0.0;
  for (std::size_t dim : {2u, 40u, 768u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor a = normal_tensor({dim}, rng);
      Tensor b = normal_tensor({dim}, rng);
      const double scale = norm(a.data()) / norm(b.data());
      for (double& v : b.values()) v *= scale;
      for (int k = 0; k <= 10; ++k) {
        const double n = norm(interpolate_slerp(a, b, k / 10.0).data());
        slerp_err = std::max(slerp_err, std::abs(n / norm(a.data()) - 1.0));
      }
    }
  }

  bool endpoints = true;
  for (double s : {0.05, 0.4, 1.0, 1.7, 3.0, 10.0}) {
    for (std::size_t n : {1u, 2u, 5u, 25u, 100u}) {
      const auto g = time_grid(n, s);
      endpoints = endpoints && g.front() == 1.0 && g.back() == 0.0;
    }
  }
  const bool pass = affinity <= 1e-12 && conditional && identity && slerp_err <= 1e-9 && endpoints;
  return {pass, "affinity dev " + fmt("%.1e", affinity) + ", w=1 conditional " + (conditional ? "exact" : "differs") +
                    ", zero-init identity " + (identity ? "exact" : "differs") + ", slerp norm dev " +
                    fmt("%.1e", slerp_err) + ", grid endpoints " + (endpoints ? "exact" : "inexact")};
}

// ---------------------------------------------------------------------------
// AC11

double region_relative_l2(const Tensor& a, const Tensor& b, const Tensor& softened, std::size_t channels) {
  std::vector<double> x, y;
  for (std::size_t p = 0; p < softened.size(); ++p) {
    if (softened[p] >= 0.01) continue;
    for (std::size_t c = 0; c < channels; ++c) {
      x.push_back(a[p * channels + c]);
      y.push_back(b[p * channels + c]);
    }
  }
  return relative_l2(x, y);
}

Outcome ac11_editing() {
  const ShapesLab& lab = shapes_lab();
  const VelocityNet& net = aligned_flow();
  const CodecView view = view_of(lab.aligned);
  const ImageShape shape = lab.aligned.image_shape();
  const std::size_t ch = shape.channels;

  double identity_err = 0.0;
  {
    const EditMask empty = soften_mask(Tensor({shape.height, shape.width}, 0.0), 1.0, 100);
    EditConfig ec;
    ec.guidance = 1.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const Tensor img = lab.held.images.slice_rows(i, i + 1).reshaped({shape.height, shape.width, ch});
      const int label = lab.held.labels[i];
      const EditResult r = masked_edit(net, view, img, empty, label, label, ec);
      identity_err = std::max(identity_err, relative_l2(r.edited.data(), r.reconstruction.data()));
    }
  }

  double preserve_err = 0.0;
  {
    Tensor raw({shape.height, shape.width}, 0.0);
    for (std::size_t y = 0; y < 6; ++y) {
      for (std::size_t x = 0; x < 6; ++x) raw.at(y, x) = 1.0;
    }
    const EditConfig ec;
    const EditMask mask = soften_mask(raw, ec.blur_sigma, ec.steps);
    for (std::size_t i = 0; i < 8; ++i) {
      const Tensor img = lab.held.images.slice_rows(i, i + 1).reshaped({shape.height, shape.width, ch});
      const int label = lab.held.labels[i];
      const EditResult r = masked_edit(net, view, img, mask, label, (label + 1) % 4, ec);
      preserve_err = std::max(preserve_err, region_relative_l2(r.edited, r.reconstruction, mask.softened, ch));
    }
  }

  const std::size_t n = 300;
  const int new_class = 2;
  EditConfig full;
  full.t_edit = 1.0;
  full.steps = 25;
  full.guidance = 1.55;
  full.shift = 1.0;
  const EditMask all = soften_mask(Tensor({shape.height, shape.width}, 1.0), full.blur_sigma, full.steps);
  Tensor edited({n, shape.pixels()});
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor img = lab.held.images.slice_rows(i, i + 1).reshaped({shape.height, shape.width, ch});
    EditConfig ec = full;
    ec.seed = 1000 + i;
    const EditResult r = masked_edit(net, view, img, all, lab.held.labels[i], new_class, ec);
    std::copy(r.edited.values().begin(), r.edited.values().end(), edited.row(i).begin());
  }
  auto plain = [&](std::uint64_t seed) {
    Rng rng(seed);
    const Tensor z = normal_tensor({n, net.feature_dim()}, rng);
    SamplerConfig sc;
    sc.steps = full.steps;
    sc.guidance = full.guidance;
    sc.shift = full.shift;
    const Tensor feats = euler_sample(net, sc, z, std::vector<int>(n, new_class)).x;
    return view.decode(denormalize(feats, view.stats)).reshaped({n, shape.pixels()});
  };
  std::vector<double> draws;
  for (std::uint64_t r = 0; r < 8; ++r) {
    draws.push_back(sliced_wasserstein(plain(2 * r + 10), plain(2 * r + 11), 64, 500 + r));
  }
  const NoiseFloor floor = summarize_floor(draws);
  const double sw = sliced_wasserstein(edited, plain(9), 64, 499);

  const bool pass = identity_err <= 0.05 && preserve_err <= 0.05 && sw <= floor.bound();
  return {pass, "identity edit rel L2 " + fmt("%.4f", identity_err) + ", preserved region rel L2 " +
                    fmt("%.4f", preserve_err) + ", full-mask SW2 " + fmt("%.4f", sw) + " vs floor " +
                    fmt("%.4f", floor.mean) + " + 3 sd = " + fmt("%.4f", floor.bound())};
}

// ---------------------------------------------------------------------------
// AC12

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SVGL_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool within_f32(std::span<const Tensor* const> a, std::span<const Tensor* const> b, double& worst) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k]->shape() != b[k]->shape()) return false;
    for (std::size_t i = 0; i < a[k]->size(); ++i) {
      const double x = (*a[k])[i], y = (*b[k])[i];
      const double rel = std::abs(x - y) / std::max(std::abs(x), 1e-30);
      if (x != 0.0 || y != 0.0) worst = std::max(worst, rel);
      if (std::abs(x) > 1e-30 && rel > std::ldexp(1.0, -24)) return false;
    }
  }
  return true;
}

Outcome ac12_reproducibility() {
  const fs::path root = fs::temp_directory_path() / "svgl_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "cli.log";
  const std::string d = root.string();
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"gen-data", "--shapes.count=400 --shapes.held_out=100"},
      {"train-semantic", "--data " + d + "/gen-data/train.svgd --semantic.epochs=30"},
      {"train-codec", "--data " + d + "/gen-data/train.svgd --held_out " + d + "/gen-data/held_out.svgd --semantic " +
                          d + "/train-semantic/semantic.svgc --codec.epochs=3"},
      {"train-baseline", "--data " + d + "/gen-data/train.svgd --held_out " + d +
                             "/gen-data/held_out.svgd --baseline.epochs=3"},
      {"train-flow", "--data " + d + "/gen-data/train.svgd --codec " + d + "/train-codec/codec.svgc --semantic " + d +
                         "/train-semantic/semantic.svgc --train.iterations=150 --net.hidden=[64,64]"},
      {"sample", "--flow " + d + "/train-flow/flow.svgc --count 8 --sampler.steps=5"},
      {"edit", "--flow " + d + "/train-flow/flow.svgc --data " + d + "/gen-data/held_out.svgd --edit.steps=10"},
      {"interpolate", "--flow " + d + "/train-flow/flow.svgc --frames 3 --sampler.steps=5"},
      {"analyze", "--target codec --codec " + d + "/train-codec/codec.svgc --data " + d +
                      "/gen-data/held_out.svgd --probe_epochs 20"},
      {"oracle", "--mc.points=4 --gap.count=1000"},
  };
  std::set<std::string> covered;
  std::string problem;
  for (const auto& [cmd, args] : runs) {
    const fs::path out = root / cmd;
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const int code = run_cli(cmd + " " + args + " --seed 3 --out " + out.string(), log);
      if (code != 0) {
        problem = cmd + " exited with " + std::to_string(code);
        break;
      }
      const std::string metrics = slurp(out / "metrics.json") + slurp(out / "resolved_config.json");
      if (rep == 0) {
        first = metrics;
      } else if (metrics != first) {
        problem = cmd + " metrics differ between reruns";
      }
    }
    if (!problem.empty()) break;
    covered.insert(cmd);
  }
  if (problem.empty()) {
    const int code = run_cli("analyze --target mixture --preset entangled --seed 3 --out " + d + "/analyze-mixture", log);
    if (code != 0) problem = "analyze mixture exited with " + std::to_string(code);
  }

  double worst = 0.0;
  bool round_trip = true;
  {
    VelocityNetConfig c;
    c.feature_dim = 40;
    c.num_classes = 4;
    c.hidden = {64, 64};
    c.attention.enabled = true;
    c.zero_init_output = false;
    c.seed = 8;
    const VelocityNet net = VelocityNet::init(c);
    save_flow(root / "rt_flow.svgc", net, FlowProvenance{});
    const VelocityNet back = load_flow(root / "rt_flow.svgc");
    round_trip = within_f32(std::as_const(net).parameters(), back.parameters(), worst) && round_trip;
  }
  {
    const SvgCodec& codec = shapes_lab().aligned;
    save_codec(root / "rt_codec.svgc", codec);
    const SvgCodec back = load_codec(root / "rt_codec.svgc");
    round_trip = within_f32(codec.trainable_parameters(), back.trainable_parameters(), worst) && round_trip;
    round_trip = within_f32(codec.semantic.backbone().parameters(), back.semantic.backbone().parameters(), worst) &&
                 round_trip;
  }
  const bool pass = problem.empty() && covered.size() == runs.size() && round_trip;
  std::string detail = std::to_string(covered.size()) + "/" + std::to_string(runs.size()) +
                       " commands bit-identical on rerun";
  if (!problem.empty()) detail += " (" + problem + ")";
  detail += ", checkpoint round trip max rel dev " + fmt("%.2e", worst) + (round_trip ? " (<= 2^-24)" : " (too large)");
  return {pass, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    std::stringstream ss(argv[i]);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) only.insert(std::stoi(tok));
    }
  }
  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", ac1_gradients},
      {2, "oracle cross-validation", ac2_oracle_vs_mc},
      {3, "solver order", ac3_solver_order},
      {4, "dispersion few-step gap", ac4_dispersion_gap},
      {5, "velocity coherence", ac5_coherence},
      {6, "residual encoder value", ac6_residual_value},
      {7, "alignment value", ac7_alignment_value},
      {8, "capability preservation", ac8_probe},
      {9, "trained-model fidelity", ac9_fidelity},
      {10, "sampler algebra", ac10_sampler_algebra},
      {11, "editing contracts", ac11_editing},
      {12, "reproducibility", ac12_reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("AC%-2d %s  %s: %s [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
