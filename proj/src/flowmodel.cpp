#include "svgl/flowmodel.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "svgl/error.hpp"

namespace svgl {

namespace {

constexpr double kNormEps = 1e-12;

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({fan_in, fan_out});
  for (double& v : w.values()) v = dist(rng);
  return w;
}

struct HeadState {
  RowMatrix q, k, qn, kn, s, a;
  Eigen::VectorXd q_norm, k_norm;
};

struct SequenceState {
  RowMatrix q, k, v, o;
  std::vector<HeadState> heads;
};

void check_tokens(const AttentionBlock& block, const Tensor& tokens) {
  if (block.heads == 0 || block.width % block.heads != 0) {
    throw ConfigError("attention width is not divisible by the head count");
  }
  if (tokens.rank() != 2 || tokens.rows() == 0 || tokens.cols() != block.width) {
    throw ShapeError("attention expects T x " + std::to_string(block.width) + " tokens, got " +
                     shape_string(tokens.shape()));
  }
}

SequenceState attend(const AttentionBlock& block, const Tensor& tokens) {
  check_tokens(block, tokens);
  const auto x = tokens.matrix();
  const auto dh = static_cast<Eigen::Index>(block.head_dim());
  SequenceState st;
  st.q = x * block.wq.matrix();
  st.k = x * block.wk.matrix();
  st.v = x * block.wv.matrix();
  st.o = RowMatrix::Zero(x.rows(), x.cols());
  for (std::size_t h = 0; h < block.heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    HeadState hs;
    hs.q = st.q.middleCols(c0, dh);
    hs.k = st.k.middleCols(c0, dh);
    if (block.qk_norm) {
      hs.q_norm = (hs.q.rowwise().squaredNorm().array() + kNormEps).sqrt();
      hs.k_norm = (hs.k.rowwise().squaredNorm().array() + kNormEps).sqrt();
      hs.qn = hs.q.array().colwise() / hs.q_norm.array();
      hs.kn = hs.k.array().colwise() / hs.k_norm.array();
      hs.s = std::exp(block.log_temperature[h]) * (hs.qn * hs.kn.transpose());
    } else {
      hs.s = (hs.q * hs.k.transpose()) / std::sqrt(static_cast<double>(dh));
    }
    hs.a = hs.s;
    for (Eigen::Index r = 0; r < hs.a.rows(); ++r) {
      const double m = hs.a.row(r).maxCoeff();
      hs.a.row(r) = (hs.a.row(r).array() - m).exp();
      hs.a.row(r) /= hs.a.row(r).sum();
    }
    st.o.middleCols(c0, dh) = hs.a * st.v.middleCols(c0, dh);
    st.heads.push_back(std::move(hs));
  }
  return st;
}

Tensor from_matrix(const RowMatrix& m) {
  Tensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  out.matrix() = m;
  return out;
}

}  // namespace

void time_embed_into(double t, std::span<double> out) {
  const std::size_t dim = out.size();
  if (dim == 0 || dim % 2 != 0) throw ConfigError("time embedding width must be even and positive");
  const std::size_t half = dim / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double f = half == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(j) / static_cast<double>(half - 1));
    out[j] = std::sin(f * t);
    out[half + j] = std::cos(f * t);
  }
}

Tensor time_embed(double t, std::size_t dim) {
  if (dim == 0) throw ConfigError("time embedding width must be even and positive");
  Tensor out({dim});
  time_embed_into(t, out.data());
  return out;
}

AttentionBlock AttentionBlock::init(std::size_t width, std::size_t heads, bool qk_norm, std::uint64_t seed) {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  Rng rng(seed);
  AttentionBlock b;
  b.width = width;
  b.heads = heads;
  b.qk_norm = qk_norm;
  b.wq = xavier(width, width, rng);
  b.wk = xavier(width, width, rng);
  b.wv = xavier(width, width, rng);
  b.wo = xavier(width, width, rng);
  b.log_temperature = Tensor({heads}, 0.5 * std::log(static_cast<double>(width / heads)));
  return b;
}

std::vector<Tensor*> AttentionBlock::parameters() { return {&wq, &wk, &wv, &wo, &log_temperature}; }

std::vector<const Tensor*> AttentionBlock::parameters() const { return {&wq, &wk, &wv, &wo, &log_temperature}; }

Tensor qk_attention(const AttentionBlock& block, const Tensor& tokens) {
  const SequenceState st = attend(block, tokens);
  return from_matrix(st.o * block.wo.matrix());
}

Tensor attention_logits(const AttentionBlock& block, const Tensor& tokens) {
  const SequenceState st = attend(block, tokens);
  const std::size_t n = tokens.rows();
  Tensor out({block.heads, n, n});
  for (std::size_t h = 0; h < block.heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        out[(h * n + i) * n + j] = st.heads[h].s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }
  return out;
}

AttentionBackward qk_attention_backward(const AttentionBlock& block, const Tensor& tokens, const Tensor& output_grad) {
  const SequenceState st = attend(block, tokens);
  require_same_shape(tokens, output_grad, "qk_attention_backward");
  const auto x = tokens.matrix();
  const auto gy = output_grad.matrix();
  const auto dh = static_cast<Eigen::Index>(block.head_dim());

  RowMatrix go = gy * block.wo.matrix().transpose();
  RowMatrix gq = RowMatrix::Zero(st.q.rows(), st.q.cols());
  RowMatrix gk = gq, gv = gq;
  Tensor glt({block.heads});
  for (std::size_t h = 0; h < block.heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    const HeadState& hs = st.heads[h];
    const RowMatrix goh = go.middleCols(c0, dh);
    const RowMatrix ga = goh * st.v.middleCols(c0, dh).transpose();
    gv.middleCols(c0, dh) = hs.a.transpose() * goh;
    RowMatrix gs = hs.a;
    for (Eigen::Index r = 0; r < gs.rows(); ++r) {
      const double inner = (ga.row(r).array() * hs.a.row(r).array()).sum();
      gs.row(r) = hs.a.row(r).array() * (ga.row(r).array() - inner);
    }
    if (block.qk_norm) {
      const double tau = std::exp(block.log_temperature[h]);
      glt[h] = (gs.array() * hs.s.array()).sum();
      const RowMatrix gqn = tau * (gs * hs.kn);
      const RowMatrix gkn = tau * (gs.transpose() * hs.qn);
      for (Eigen::Index r = 0; r < gqn.rows(); ++r) {
        gq.row(r).segment(c0, dh) = (gqn.row(r) - hs.qn.row(r) * hs.qn.row(r).dot(gqn.row(r))) / hs.q_norm[r];
        gk.row(r).segment(c0, dh) = (gkn.row(r) - hs.kn.row(r) * hs.kn.row(r).dot(gkn.row(r))) / hs.k_norm[r];
      }
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      gq.middleCols(c0, dh) = scale * (gs * hs.k);
      gk.middleCols(c0, dh) = scale * (gs.transpose() * hs.q);
    }
  }

  AttentionBackward result;
  result.param_grads.push_back(from_matrix(x.transpose() * gq));
  result.param_grads.push_back(from_matrix(x.transpose() * gk));
  result.param_grads.push_back(from_matrix(x.transpose() * gv));
  result.param_grads.push_back(from_matrix(st.o.transpose() * gy));
  result.param_grads.push_back(std::move(glt));
  result.input_grad = from_matrix(gq * block.wq.matrix().transpose() + gk * block.wk.matrix().transpose() +
                                  gv * block.wv.matrix().transpose());
  return result;
}

struct VelocityNet::Cache {
  Tensor input;
  MlpCache stem;
  Tensor stem_out;
  Tensor hidden;  // after the optional attention residual
  MlpCache head;
  std::vector<int> classes;
};

VelocityNet VelocityNet::init(const VelocityNetConfig& config) {
  if (config.feature_dim == 0) throw ConfigError("velocity net needs a positive feature width");
  if (config.num_classes < 1) throw ConfigError("velocity net needs at least one class");
  if (config.class_dim == 0) throw ConfigError("class embedding width must be positive");
  if (config.time_dim == 0 || config.time_dim % 2 != 0) throw ConfigError("time embedding width must be even");
  if (config.hidden.empty()) throw ConfigError("velocity net needs at least one hidden layer");
  VelocityNet net;
  net.config_ = config;
  const std::size_t in = config.feature_dim + config.time_dim + config.class_dim;
  const std::size_t h0 = config.hidden.front();
  net.stem_ = Mlp::init({in, h0}, config.activation, derive_seed(config.seed, 1));
  if (config.attention.enabled) {
    const auto& a = config.attention;
    if (a.tokens == 0 || h0 % a.tokens != 0) {
      throw ConfigError("hidden width " + std::to_string(h0) + " does not split into " + std::to_string(a.tokens) +
                        " tokens");
    }
    net.attention_ = AttentionBlock::init(h0 / a.tokens, a.heads, a.qk_norm, derive_seed(config.seed, 2));
  }
  std::vector<std::size_t> head_dims(config.hidden.begin(), config.hidden.end());
  head_dims.push_back(config.feature_dim);
  net.head_ = Mlp::init(head_dims, config.activation, derive_seed(config.seed, 3));
  if (config.zero_init_output) net.head_.zero_output_layer();
  Rng rng(derive_seed(config.seed, 4));
  net.class_table_ = normal_tensor({static_cast<std::size_t>(config.num_classes) + 1, config.class_dim}, rng);
  for (double& v : net.class_table_.values()) v *= 0.5;
  return net;
}

VelocityNet VelocityNet::from_parts(const VelocityNetConfig& config, Mlp stem, std::optional<AttentionBlock> attention,
                                    Mlp head, Tensor class_table) {
  VelocityNet net;
  net.config_ = config;
  const std::size_t in = config.feature_dim + config.time_dim + config.class_dim;
  if (stem.input_width() != in || head.output_width() != config.feature_dim ||
      stem.output_width() != head.input_width()) {
    throw ShapeError("velocity net parts do not compose");
  }
  if (class_table.rows() != static_cast<std::size_t>(config.num_classes) + 1 || class_table.cols() != config.class_dim) {
    throw ShapeError("class table does not match the configured classes");
  }
  net.stem_ = std::move(stem);
  net.attention_ = std::move(attention);
  net.head_ = std::move(head);
  net.class_table_ = std::move(class_table);
  return net;
}

Tensor VelocityNet::assemble_input(const Tensor& x, std::span<const double> t, std::span<const int> classes) const {
  const std::size_t n = x.rows();
  const std::size_t d = config_.feature_dim;
  if (x.cols() != d) throw ShapeError("velocity net expects feature width " + std::to_string(d));
  if (t.size() != n || classes.size() != n) throw ShapeError("velocity net needs one t and one class per row");
  const std::size_t in = d + config_.time_dim + config_.class_dim;
  Tensor input({n, in});
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] < 0 || classes[i] > config_.num_classes) {
      throw ConfigError("class id " + std::to_string(classes[i]) + " outside [0, " +
                        std::to_string(config_.num_classes) + "]");
    }
    auto row = input.row(i);
    auto xi = x.row(i);
    std::copy(xi.begin(), xi.end(), row.begin());
    time_embed_into(t[i], row.subspan(d, config_.time_dim));
    auto emb = class_table_.row(static_cast<std::size_t>(classes[i]));
    std::copy(emb.begin(), emb.end(), row.begin() + static_cast<std::ptrdiff_t>(d + config_.time_dim));
  }
  return input;
}

Tensor VelocityNet::run(const Tensor& x, std::span<const double> t, std::span<const int> classes, Cache* cache) const {
  Tensor input = assemble_input(x, t, classes);
  Tensor h;
  MlpCache stem_cache;
  if (cache) {
    MlpForward f = stem_.forward(input);
    h = std::move(f.output);
    stem_cache = std::move(f.cache);
  } else {
    h = stem_.apply(input);
  }
  Tensor stem_out;
  if (attention_) {
    if (cache) stem_out = h;
    const std::size_t tokens = config_.attention.tokens;
    const std::size_t width = attention_->width;
    for (std::size_t i = 0; i < h.rows(); ++i) {
      auto row = h.row(i);
      Tensor seq({tokens, width}, std::vector<double>(row.begin(), row.end()));
      Tensor out = qk_attention(*attention_, seq);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += out[j];
    }
  }
  Tensor a = activate(config_.activation, h);
  Tensor out;
  if (cache) {
    MlpForward f = head_.forward(a);
    out = std::move(f.output);
    cache->input = std::move(input);
    cache->stem = std::move(stem_cache);
    cache->stem_out = std::move(stem_out);
    cache->hidden = std::move(h);
    cache->head = std::move(f.cache);
    cache->classes.assign(classes.begin(), classes.end());
  } else {
    out = head_.apply(a);
  }
  return out;
}

VelocityNet::FullBackward VelocityNet::run_backward(const Cache& cache, const Tensor& output_grad) const {
  MlpBackward hb = head_.backward(cache.head, output_grad);
  Tensor gh = activate_backward(config_.activation, cache.hidden, hb.input_grad);
  Gradients attn_grads;
  if (attention_) {
    const std::size_t tokens = config_.attention.tokens;
    const std::size_t width = attention_->width;
    attn_grads = zero_gradients(attention_->parameters());
    Tensor g_stem = gh;
    for (std::size_t i = 0; i < gh.rows(); ++i) {
      auto xin = cache.stem_out.row(i);
      auto gout = gh.row(i);
      Tensor seq({tokens, width}, std::vector<double>(xin.begin(), xin.end()));
      Tensor gseq({tokens, width}, std::vector<double>(gout.begin(), gout.end()));
      AttentionBackward ab = qk_attention_backward(*attention_, seq, gseq);
      accumulate(attn_grads, ab.param_grads);
      auto gs = g_stem.row(i);
      for (std::size_t j = 0; j < gs.size(); ++j) gs[j] += ab.input_grad[j];
    }
    gh = std::move(g_stem);
  }
  MlpBackward sb = stem_.backward(cache.stem, gh);

  FullBackward result;
  result.param_grads = std::move(sb.param_grads);
  for (auto& g : attn_grads) result.param_grads.push_back(std::move(g));
  for (auto& g : hb.param_grads) result.param_grads.push_back(std::move(g));

  const std::size_t d = config_.feature_dim;
  const std::size_t off = d + config_.time_dim;
  Tensor gtable(class_table_.shape());
  const std::size_t n = sb.input_grad.rows();
  result.input_grad = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = sb.input_grad.row(i);
    auto gx = result.input_grad.row(i);
    std::copy(gi.begin(), gi.begin() + static_cast<std::ptrdiff_t>(d), gx.begin());
    auto gc = gtable.row(static_cast<std::size_t>(cache.classes[i]));
    for (std::size_t j = 0; j < config_.class_dim; ++j) gc[j] += gi[off + j];
  }
  result.param_grads.push_back(std::move(gtable));
  return result;
}

Tensor VelocityNet::forward(const Tensor& x, std::span<const double> t, std::span<const int> classes) const {
  return run(x, t, classes, nullptr);
}

FieldPass VelocityNet::forward_train(const Tensor& x, std::span<const double> t, std::span<const int> classes) const {
  auto cache = std::make_shared<Cache>();
  FieldPass pass;
  pass.output = run(x, t, classes, cache.get());
  pass.backward = [this, cache](const Tensor& g) { return run_backward(*cache, g).param_grads; };
  return pass;
}

VelocityNet::FullBackward VelocityNet::gradients(const Tensor& x, std::span<const double> t,
                                                 std::span<const int> classes, const Tensor& output_grad) const {
  Cache cache;
  run(x, t, classes, &cache);
  return run_backward(cache, output_grad);
}

std::vector<Tensor*> VelocityNet::parameters() {
  std::vector<Tensor*> out = stem_.parameters();
  if (attention_) {
    for (Tensor* p : attention_->parameters()) out.push_back(p);
  }
  for (Tensor* p : head_.parameters()) out.push_back(p);
  out.push_back(&class_table_);
  return out;
}

std::vector<const Tensor*> VelocityNet::parameters() const {
  std::vector<const Tensor*> out = stem_.parameters();
  if (attention_) {
    for (const Tensor* p : attention_->parameters()) out.push_back(p);
  }
  for (const Tensor* p : head_.parameters()) out.push_back(p);
  out.push_back(&class_table_);
  return out;
}

std::size_t VelocityNet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

LrSchedule lr_schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown learning-rate schedule '" + name + "'");
}

const char* to_string(LrSchedule schedule) { return schedule == LrSchedule::constant ? "constant" : "cosine"; }

double scheduled_lr(LrSchedule schedule, double base, double min_ratio, std::size_t it, std::size_t total) {
  if (schedule == LrSchedule::constant || total <= 1) return base;
  const double u = static_cast<double>(it) / static_cast<double>(total - 1);
  return base * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * u)));
}

TrainReport train_flow(VelocityNet& net, const Tensor& features, std::span<const int> labels,
                       const Interpolant& interp, const TrainConfig& config) {
  const std::size_t n = features.rows();
  if (n == 0 || labels.size() != n) throw UsageError("flow training needs one label per feature row");
  if (features.cols() != net.feature_dim()) throw ShapeError("feature width does not match the velocity net");
  if (!(config.label_drop_prob >= 0.0 && config.label_drop_prob < 1.0)) {
    throw ConfigError("label_drop_prob must lie in [0, 1)");
  }
  if (config.batch == 0) throw ConfigError("batch size must be positive");
  if (!(config.min_lr_ratio > 0.0 && config.min_lr_ratio <= 1.0)) throw ConfigError("min_lr_ratio must lie in (0, 1]");
  for (int c : labels) {
    if (c < 0 || c >= net.config().num_classes) throw ConfigError("training label outside the class range");
  }

  std::vector<Tensor*> params = net.parameters();
  std::vector<const Tensor*> cparams(params.begin(), params.end());
  AdamWState state = AdamWState::for_parameters(cparams, config.optimizer);
  Tensor snapshot = flatten_parameters(cparams);

  Rng rng(derive_seed(config.seed, 0x5eed));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const TrainableField field = [&net](const Tensor& xt, std::span<const double> t, std::span<const int> c) {
    return net.forward_train(xt, t, c);
  };
  const std::size_t d = features.cols();
  const std::size_t log_every = config.log_every == 0 ? config.iterations : config.log_every;

  TrainReport report;
  double interval = 0.0;
  std::size_t interval_count = 0;
  TrainingBatch batch;
  batch.x0 = Tensor({config.batch, d});
  batch.classes.resize(config.batch);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t idx = pick(rng);
      auto src = features.row(idx);
      std::copy(src.begin(), src.end(), batch.x0.row(b).begin());
      const bool drop = config.label_drop_prob > 0.0 && uniform01(rng) < config.label_drop_prob;
      batch.classes[b] = drop ? net.null_class() : labels[idx];
    }
    try {
      LossResult r = fm_loss(field, batch, interp, config.weighting, rng);
      state.config.lr = scheduled_lr(config.schedule, config.optimizer.lr, config.min_lr_ratio, it, config.iterations);
      adamw_step(params, r.grads, state);
      interval += r.loss;
      ++interval_count;
      report.final_loss = r.loss;
    } catch (const NumericError&) {
      unflatten_parameters(snapshot, params);
      throw;
    }
    if (interval_count == log_every || it + 1 == config.iterations) {
      report.loss_curve.push_back(interval / static_cast<double>(interval_count));
      interval = 0.0;
      interval_count = 0;
      snapshot = flatten_parameters(cparams);
    }
    report.iterations = it + 1;
  }
  return report;
}

}  // namespace svgl
