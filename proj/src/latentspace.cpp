#include "svgl/latentspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svgl/error.hpp"

namespace svgl {

namespace {

std::vector<std::size_t> with_ends(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Consecutive batches of `order`; a trailing batch smaller than two rows is
// folded into the previous one.
std::vector<std::vector<std::size_t>> batches_of(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch) {
    const std::size_t e = std::min(order.size(), b + batch);
    if (e - b < 2 && !out.empty()) {
      out.back().insert(out.back().end(), order.begin() + static_cast<std::ptrdiff_t>(b), order.end());
    } else {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  return out;
}

void require_trainable(std::size_t epochs, std::size_t batch, double lr) {
  if (epochs == 0) throw ConfigError("training needs at least one epoch");
  if (batch < 2) throw ConfigError("training batch must hold at least two rows");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

template <class... Nets>
std::vector<Tensor*> params_of(Nets&... nets) {
  std::vector<Tensor*> out;
  (
      [&] {
        for (Tensor* p : nets.parameters()) out.push_back(p);
      }(),
      ...);
  return out;
}

std::vector<const Tensor*> const_view(const std::vector<Tensor*>& p) { return {p.begin(), p.end()}; }

Tensor clamp_unit(Tensor t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

Tensor to_images(Tensor flat, const ImageShape& shape) {
  const std::size_t n = flat.rows();
  return flat.reshaped({n, shape.height, shape.width, shape.channels});
}

}  // namespace

ChannelStats ChannelStats::compute(const Tensor& features) {
  const std::size_t n = features.rows(), c = features.cols();
  if (n == 0) throw UsageError("channel statistics need at least one row");
  ChannelStats s;
  s.mean = Tensor({c});
  s.std = Tensor({c});
  s.population = n;
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += features.at(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (features.at(i, j) - m) * (features.at(i, j) - m);
    s.mean[j] = m;
    s.std[j] = std::max(kStdFloor, std::sqrt(v / static_cast<double>(n)));
  }
  return s;
}

double ChannelStats::pooled_mean() const {
  return std::accumulate(mean.values().begin(), mean.values().end(), 0.0) / static_cast<double>(mean.size());
}

double ChannelStats::pooled_std() const {
  return std::accumulate(std.values().begin(), std.values().end(), 0.0) / static_cast<double>(std.size());
}

Tensor normalize(const Tensor& features, const ChannelStats& stats) {
  if (features.cols() != stats.channels()) throw ShapeError("feature channels do not match the statistics");
  Tensor out = features;
  const std::size_t c = stats.channels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - stats.mean[i % c]) / stats.std[i % c];
  return out;
}

Tensor denormalize(const Tensor& features, const ChannelStats& stats) {
  if (features.cols() != stats.channels()) throw ShapeError("feature channels do not match the statistics");
  Tensor out = features;
  const std::size_t c = stats.channels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * stats.std[i % c] + stats.mean[i % c];
  return out;
}

ImageShape image_shape_of(const ShapeImageDataset& dataset) {
  const auto& s = dataset.images.shape();
  if (s.size() != 4) throw ShapeError("dataset images must be n x H x W x C");
  return {s[1], s[2], s[3]};
}

Tensor flatten_images(const Tensor& images, const ImageShape& shape) {
  const std::size_t p = shape.pixels();
  if (images.empty() || images.size() % p != 0) throw ShapeError("images do not match " + std::to_string(p) + " pixels");
  if (images.rank() == 4 && (images.extent(1) != shape.height || images.extent(2) != shape.width ||
                             images.extent(3) != shape.channels)) {
    throw ShapeError("image extents do not match the codec");
  }
  if (images.rank() == 2 && images.cols() == p) return images;
  if (images.rank() == 3 && shape.channels != 1 && images.size() == p) return images.reshaped({1, p});
  return images.reshaped({images.size() / p, p});
}

Tensor SemanticEncoder::encode(const Tensor& images) const { return backbone_.apply(flatten_images(images, shape_)); }

Mlp& SemanticEncoder::mutable_backbone() {
  if (frozen_) throw ContractError("semantic encoder is frozen");
  return backbone_;
}

std::uint64_t SemanticEncoder::checksum() const { return parameter_checksum(backbone_.parameters()); }

double train_semantic(SemanticEncoder& encoder, const ShapeImageDataset& dataset, const SemanticConfig& config,
                      std::uint64_t seed) {
  Mlp& backbone = encoder.mutable_backbone();
  require_trainable(config.epochs, config.batch, config.lr);
  const std::size_t n = dataset.count();
  const int k = 1 + *std::max_element(dataset.labels.begin(), dataset.labels.end());
  if (k < 2) throw UsageError("semantic proxy training needs at least two classes");
  Mlp head = Mlp::init({backbone.output_width(), static_cast<std::size_t>(k)}, Activation::relu,
                       derive_seed(seed, 11));
  const Tensor x = flatten_images(dataset.images, encoder.image_shape());
  std::vector<Tensor*> params = params_of(backbone, head);
  AdamWState state = AdamWState::for_parameters(const_view(params), {config.lr, 0.9, 0.999, config.weight_decay, 1e-8});
  Rng rng(derive_seed(seed, 12));

  auto logits_of = [&](const Tensor& xb) { return head.apply(backbone.apply(xb)); };
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : batches_of(shuffled(n, rng), config.batch)) {
      const Tensor xb = x.gather_rows(idx);
      MlpForward f = backbone.forward(xb);
      MlpForward h = head.forward(f.output);
      Tensor g = h.output;
      const double b = static_cast<double>(idx.size());
      double loss = 0.0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto row = g.row(i);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double& v : row) z += (v = std::exp(v - m));
        for (double& v : row) v /= z;
        const auto y = static_cast<std::size_t>(dataset.labels[idx[i]]);
        loss -= std::log(std::max(row[y], 1e-300));
        row[y] -= 1.0;
        for (double& v : row) v /= b;
      }
      if (!std::isfinite(loss)) throw NumericError("semantic proxy training diverged");
      MlpBackward hb = head.backward(h.cache, g);
      MlpBackward fb = backbone.backward(f.cache, hb.input_grad);
      Gradients grads = std::move(fb.param_grads);
      for (auto& t : hb.param_grads) grads.push_back(std::move(t));
      adamw_step(params, grads, state);
    }
  }
  const Tensor logits = logits_of(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == dataset.labels[i]) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(n);
  encoder.meta = {acc, config.epochs, n, seed};
  return acc;
}

SemanticEncoder pretrain_semantic(const ShapeImageDataset& dataset, const SemanticConfig& config,
                                  std::uint64_t seed) {
  const ImageShape shape = image_shape_of(dataset);
  SemanticEncoder enc(Mlp::init(with_ends(shape.pixels(), config.hidden, config.width), Activation::relu,
                                derive_seed(seed, 10)),
                      shape);
  const double acc = train_semantic(enc, dataset, config, seed);
  if (acc < 0.8) {
    throw NumericError("semantic proxy training diverged: train accuracy " + std::to_string(acc) + " < 0.8");
  }
  enc.freeze();
  return enc;
}

AlignmentTarget AlignmentTarget::from_stats(const ChannelStats& semantic) {
  return {semantic.pooled_mean(), semantic.pooled_std()};
}

AlignmentValue alignment_penalty(const Tensor& residual, const AlignmentTarget& target) {
  const std::size_t b = residual.rows(), c = residual.cols();
  if (b < 2) throw UsageError("alignment penalty needs a batch of at least two rows");
  AlignmentValue out;
  out.grad = Tensor(residual.shape());
  const double bd = static_cast<double>(b);
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < b; ++i) m += residual.at(i, j);
    m /= bd;
    double v = 0.0;
    for (std::size_t i = 0; i < b; ++i) v += (residual.at(i, j) - m) * (residual.at(i, j) - m);
    const double s = std::sqrt(v / bd + 1e-12);
    out.penalty += (m - target.mean) * (m - target.mean) + (s - target.std) * (s - target.std);
    for (std::size_t i = 0; i < b; ++i) {
      out.grad.at(i, j) = 2.0 * (m - target.mean) / bd + 2.0 * (s - target.std) * (residual.at(i, j) - m) / (bd * s);
    }
  }
  return out;
}

double alignment_penalty(const Tensor& residual, const ChannelStats& semantic_stats) {
  return alignment_penalty(residual, AlignmentTarget::from_stats(semantic_stats)).penalty;
}

SvgCodec SvgCodec::create(SemanticEncoder semantic, const CodecConfig& config, std::uint64_t seed) {
  if (!semantic.frozen()) throw ContractError("codec construction needs a frozen semantic encoder");
  if (!(config.align_weight >= 0.0)) throw ConfigError("align_weight must be non-negative");
  SvgCodec codec;
  const std::size_t p = semantic.image_shape().pixels();
  codec.config = config;
  codec.semantic_checksum = semantic.checksum();
  if (config.residual_width > 0) {
    codec.residual = Mlp::init(with_ends(p, config.residual_hidden, config.residual_width), Activation::relu,
                               derive_seed(seed, 20));
  }
  codec.decoder = Mlp::init(with_ends(semantic.width() + config.residual_width, config.decoder_hidden, p),
                            Activation::relu, derive_seed(seed, 21));
  codec.semantic = std::move(semantic);
  return codec;
}

std::vector<Tensor*> SvgCodec::trainable_parameters() {
  std::vector<Tensor*> out;
  if (config.residual_width > 0) out = residual.parameters();
  for (Tensor* p : decoder.parameters()) out.push_back(p);
  return out;
}

std::vector<const Tensor*> SvgCodec::trainable_parameters() const {
  std::vector<const Tensor*> out;
  if (config.residual_width > 0) out = residual.parameters();
  for (const Tensor* p : decoder.parameters()) out.push_back(p);
  return out;
}

Tensor svg_encode(const SvgCodec& codec, const Tensor& images) {
  if (!codec.semantic.frozen()) throw ContractError("svg_encode needs a frozen semantic encoder");
  const Tensor x = flatten_images(images, codec.image_shape());
  Tensor sem = codec.semantic.encode(x);
  if (codec.config.residual_width == 0) return sem;
  return concat_cols(sem, codec.residual.apply(x));
}

Tensor decode(const SvgCodec& codec, const Tensor& features) {
  if (features.cols() != codec.feature_width()) {
    throw ShapeError("decode expects " + std::to_string(codec.feature_width()) + " channels");
  }
  return to_images(clamp_unit(codec.decoder.apply(features.reshaped({features.rows(), features.cols()}))),
                   codec.image_shape());
}

CodecReport train_codec_stage1(SvgCodec& codec, const ShapeImageDataset& dataset, std::uint64_t seed) {
  if (!codec.semantic.frozen()) throw ContractError("stage 1 needs a frozen semantic encoder");
  if (codec.semantic.checksum() != codec.semantic_checksum) {
    throw ContractError("semantic encoder checksum does not match the codec");
  }
  const CodecConfig& cfg = codec.config;
  require_trainable(cfg.epochs, cfg.batch, cfg.lr);
  if (!(image_shape_of(dataset) == codec.image_shape())) throw ShapeError("dataset images do not match the codec");
  const std::size_t n = dataset.count();
  const std::size_t cs = codec.semantic_width(), cr = cfg.residual_width;
  const Tensor x = flatten_images(dataset.images, codec.image_shape());
  const Tensor sem = codec.semantic.encode(x);
  codec.target = AlignmentTarget::from_stats(ChannelStats::compute(sem));

  std::vector<Tensor*> params = codec.trainable_parameters();
  AdamWState state = AdamWState::for_parameters(const_view(params), {cfg.lr, 0.9, 0.999, 0.0, 1e-8});
  Tensor snapshot = flatten_parameters(const_view(params));
  Rng rng(derive_seed(seed, 22));
  const double p = static_cast<double>(codec.image_shape().pixels());

  CodecReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0, epoch_mse = 0.0, epoch_pen = 0.0;
    const auto batches = batches_of(shuffled(n, rng), cfg.batch);
    for (const auto& idx : batches) {
      const Tensor xb = x.gather_rows(idx);
      const Tensor sb = sem.gather_rows(idx);
      MlpForward rf;
      Tensor z = sb;
      AlignmentValue align;
      if (cr > 0) {
        rf = codec.residual.forward(xb);
        align = alignment_penalty(rf.output, codec.target);
        z = concat_cols(sb, rf.output);
      }
      MlpForward df = codec.decoder.forward(z);
      const double bd = static_cast<double>(idx.size());
      Tensor g = df.output - xb;
      const double mse = squared_norm(g.data()) / (bd * p);
      for (double& v : g.values()) v *= 2.0 / (bd * p);
      const double loss = mse + cfg.align_weight * align.penalty;
      if (!std::isfinite(loss)) {
        unflatten_parameters(snapshot, params);
        throw NumericError("stage-1 loss is not finite");
      }
      MlpBackward db = codec.decoder.backward(df.cache, g);
      Gradients grads;
      if (cr > 0) {
        Tensor gr = slice_cols(db.input_grad, cs, cs + cr);
        axpy(cfg.align_weight, align.grad, gr);
        grads = codec.residual.backward(rf.cache, gr).param_grads;
      }
      for (auto& t : db.param_grads) grads.push_back(std::move(t));
      adamw_step(params, grads, state);
      epoch_loss += loss;
      epoch_mse += mse;
      epoch_pen += align.penalty;
    }
    const double nb = static_cast<double>(batches.size());
    report.loss_curve.push_back(epoch_loss / nb);
    report.final_recon_mse = epoch_mse / nb;
    report.final_penalty = epoch_pen / nb;
    snapshot = flatten_parameters(const_view(params));
  }
  if (codec.semantic.checksum() != codec.semantic_checksum) {
    throw ContractError("semantic encoder changed during stage 1");
  }
  codec.stats = ChannelStats::compute(svg_encode(codec, x));
  codec.trained = true;
  return report;
}

BaselineCodec train_baseline_vae(const ShapeImageDataset& dataset, const BaselineConfig& config, std::uint64_t seed,
                                 CodecReport* report) {
  require_trainable(config.epochs, config.batch, config.lr);
  if (config.latent_width == 0) throw ConfigError("baseline latent width must be positive");
  if (!(config.kl_weight >= 0.0)) throw ConfigError("kl_weight must be non-negative");
  const bool vae = config.kl_weight > 0.0;
  const std::size_t l = config.latent_width;
  BaselineCodec codec;
  codec.config = config;
  codec.shape = image_shape_of(dataset);
  const std::size_t p = codec.shape.pixels();
  codec.encoder = Mlp::init(with_ends(p, config.hidden, vae ? 2 * l : l), Activation::relu, derive_seed(seed, 30));
  codec.decoder = Mlp::init(with_ends(l, config.decoder_hidden, p), Activation::relu, derive_seed(seed, 31));

  const std::size_t n = dataset.count();
  const Tensor x = flatten_images(dataset.images, codec.shape);
  std::vector<Tensor*> params = params_of(codec.encoder, codec.decoder);
  AdamWState state = AdamWState::for_parameters(const_view(params), {config.lr, 0.9, 0.999, 0.0, 1e-8});
  Tensor snapshot = flatten_parameters(const_view(params));
  Rng rng(derive_seed(seed, 32));
  const double pd = static_cast<double>(p);

  CodecReport local;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0, epoch_mse = 0.0, epoch_kl = 0.0;
    const auto batches = batches_of(shuffled(n, rng), config.batch);
    for (const auto& idx : batches) {
      const Tensor xb = x.gather_rows(idx);
      const std::size_t b = idx.size();
      const double bd = static_cast<double>(b);
      MlpForward ef = codec.encoder.forward(xb);
      Tensor z({b, l});
      Tensor eps;
      double kl = 0.0;
      if (vae) {
        eps = normal_tensor({b, l}, rng);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < l; ++j) {
            const double mu = ef.output.at(i, j), lv = ef.output.at(i, l + j);
            z.at(i, j) = mu + std::exp(0.5 * lv) * eps.at(i, j);
            kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
          }
        }
        kl /= bd;
      } else {
        z = ef.output;
      }
      MlpForward df = codec.decoder.forward(z);
      Tensor g = df.output - xb;
      const double mse = squared_norm(g.data()) / (bd * pd);
      for (double& v : g.values()) v *= 2.0 / (bd * pd);
      const double loss = mse + config.kl_weight * kl;
      if (!std::isfinite(loss)) {
        unflatten_parameters(snapshot, params);
        throw NumericError("baseline loss is not finite");
      }
      MlpBackward db = codec.decoder.backward(df.cache, g);
      Tensor ge(ef.output.shape());
      if (vae) {
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < l; ++j) {
            const double mu = ef.output.at(i, j), lv = ef.output.at(i, l + j);
            const double gz = db.input_grad.at(i, j);
            ge.at(i, j) = gz + config.kl_weight * mu / bd;
            ge.at(i, l + j) = gz * eps.at(i, j) * 0.5 * std::exp(0.5 * lv) +
                              config.kl_weight * 0.5 * (std::exp(lv) - 1.0) / bd;
          }
        }
      } else {
        ge = db.input_grad;
      }
      Gradients grads = codec.encoder.backward(ef.cache, ge).param_grads;
      for (auto& t : db.param_grads) grads.push_back(std::move(t));
      adamw_step(params, grads, state);
      epoch_loss += loss;
      epoch_mse += mse;
      epoch_kl += kl;
    }
    const double nb = static_cast<double>(batches.size());
    local.loss_curve.push_back(epoch_loss / nb);
    local.final_recon_mse = epoch_mse / nb;
    local.final_penalty = epoch_kl / nb;
    snapshot = flatten_parameters(const_view(params));
  }
  codec.trained = true;
  codec.stats = ChannelStats::compute(baseline_encode(codec, x));
  if (report) *report = std::move(local);
  return codec;
}

Tensor baseline_encode(const BaselineCodec& codec, const Tensor& images) {
  Tensor out = codec.encoder.apply(flatten_images(images, codec.shape));
  if (codec.config.kl_weight > 0.0) return slice_cols(out, 0, codec.config.latent_width);
  return out;
}

Tensor baseline_decode(const BaselineCodec& codec, const Tensor& features) {
  if (features.cols() != codec.config.latent_width) throw ShapeError("baseline decode width mismatch");
  return to_images(clamp_unit(codec.decoder.apply(features.reshaped({features.rows(), features.cols()}))),
                   codec.shape);
}

CodecView view_of(const SvgCodec& codec) {
  return {[&codec](const Tensor& images) { return svg_encode(codec, images); },
          [&codec](const Tensor& features) { return decode(codec, features); }, codec.stats, codec.image_shape()};
}

CodecView view_of(const BaselineCodec& codec) {
  return {[&codec](const Tensor& images) { return baseline_encode(codec, images); },
          [&codec](const Tensor& features) { return baseline_decode(codec, features); }, codec.stats, codec.shape};
}

}  // namespace svgl
