#include "svgl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>

#include "svgl/checkpoint.hpp"
#include "svgl/datagen.hpp"
#include "svgl/editing.hpp"
#include "svgl/flowmodel.hpp"
#include "svgl/latentspace.hpp"
#include "svgl/metrics.hpp"
#include "svgl/oracle.hpp"
#include "svgl/sampler.hpp"

namespace svgl {

namespace fs = std::filesystem;

namespace {

Json common(const std::string& command) { return {{"seed", 0}, {"out", "runs/" + command}}; }

Json sampler_defaults() { return {{"steps", 25}, {"guidance", 1.55}, {"zero_init", false}, {"shift", 1.0}}; }

Json net_defaults() {
  return {{"hidden", {256, 256, 256}},
          {"time_dim", 16},
          {"class_dim", 16},
          {"activation", "silu"},
          {"attention", {{"enabled", false}, {"tokens", 4}, {"heads", 2}, {"qk_norm", true}}}};
}

Json train_defaults() {
  return {{"batch", 256},          {"iterations", 4000},      {"lr", 1e-3},
          {"schedule", "cosine"},  {"min_lr_ratio", 0.01},    {"weight_decay", 0.0},
          {"label_drop_prob", 0.1}, {"log_every", 100}};
}

const std::map<std::string, Json>& defaults_table() {
  static const std::map<std::string, Json> table = [] {
    std::map<std::string, Json> t;
    t["gen-data"] = {{"kind", "shapes"},
                     {"shapes", {{"count", 2000}, {"held_out", 500}, {"classes", 4}, {"size", 16}}},
                     {"mixture", {{"preset", "dispersed"}, {"dim", 2}, {"count", 20000}, {"layout_seed", 0}}}};
    const SemanticConfig sc;
    t["train-semantic"] = {{"data", "runs/gen-data/train.svgd"},
                           {"semantic",
                            {{"hidden", sc.hidden},
                             {"width", sc.width},
                             {"epochs", sc.epochs},
                             {"batch", sc.batch},
                             {"lr", sc.lr},
                             {"weight_decay", sc.weight_decay}}}};
    const CodecConfig cc;
    t["train-codec"] = {{"data", "runs/gen-data/train.svgd"},
                        {"held_out", "runs/gen-data/held_out.svgd"},
                        {"semantic", "runs/train-semantic/semantic.svgc"},
                        {"codec",
                         {{"residual_width", cc.residual_width},
                          {"residual_hidden", cc.residual_hidden},
                          {"decoder_hidden", cc.decoder_hidden},
                          {"align_weight", cc.align_weight},
                          {"epochs", cc.epochs},
                          {"batch", cc.batch},
                          {"lr", cc.lr}}}};
    const BaselineConfig bc;
    t["train-baseline"] = {{"data", "runs/gen-data/train.svgd"},
                           {"held_out", "runs/gen-data/held_out.svgd"},
                           {"baseline",
                            {{"latent_width", bc.latent_width},
                             {"hidden", bc.hidden},
                             {"decoder_hidden", bc.decoder_hidden},
                             {"kl_weight", bc.kl_weight},
                             {"epochs", bc.epochs},
                             {"batch", bc.batch},
                             {"lr", bc.lr}}}};
    t["train-flow"] = {{"data", "runs/gen-data/train.svgd"},
                       {"codec", "runs/train-codec/codec.svgc"},
                       {"semantic", ""},
                       {"net", net_defaults()},
                       {"train", train_defaults()}};
    t["sample"] = {{"flow", "runs/train-flow/flow.svgc"},
                   {"codec", ""},
                   {"count", 16},
                   {"classes", Json::array()},
                   {"columns", 8},
                   {"sampler", sampler_defaults()}};
    const EditConfig ec;
    t["edit"] = {{"flow", "runs/train-flow/flow.svgc"},
                 {"codec", ""},
                 {"data", "runs/gen-data/held_out.svgd"},
                 {"index", 0},
                 {"new_class", 1},
                 {"mask", {{"top", 4}, {"left", 4}, {"height", 8}, {"width", 8}}},
                 {"edit",
                  {{"t_edit", ec.t_edit},
                   {"steps", ec.steps},
                   {"guidance", ec.guidance},
                   {"shift", ec.shift},
                   {"blur_sigma", ec.blur_sigma}}}};
    t["interpolate"] = {{"flow", "runs/train-flow/flow.svgc"},
                        {"codec", ""},
                        {"class", 0},
                        {"mode", "slerp"},
                        {"frames", 9},
                        {"sampler", sampler_defaults()}};
    t["analyze"] = {{"target", "codec"},
                    {"codec", "runs/train-codec/codec.svgc"},
                    {"data", "runs/gen-data/held_out.svgd"},
                    {"probe_epochs", 100},
                    {"pca_components", 2},
                    {"preset", "dispersed"},
                    {"layout_seed", 0},
                    {"flow", ""},
                    {"t", 0.5},
                    {"grid", {{"size", 21}, {"extent", 6.0}}}};
    t["oracle"] = {{"preset", "dispersed"},
                   {"dim", 2},
                   {"layout_seed", 0},
                   {"t", 0.5},
                   {"grid", {{"size", 21}, {"extent", 6.0}}},
                   {"mc", {{"samples", 200000}, {"points", 20}}},
                   {"gap", {{"count", 10000}, {"low", 5}, {"high", 100}, {"projections", 64}}}};
    for (auto& [name, cfg] : t) cfg.update(common(name));
    return t;
  }();
  return table;
}

std::vector<std::string> split_path(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("malformed config key '" + key + "'");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("empty config key");
  return parts;
}

bool compatible(const Json& slot, const Json& value) {
  if (slot.is_number_float()) return value.is_number();
  if (slot.is_number_integer()) return value.is_number_integer() || value.is_number_unsigned();
  if (slot.is_boolean()) return value.is_boolean();
  if (slot.is_string()) return value.is_string();
  if (slot.is_array()) return value.is_array();
  return false;
}

void assign(Json& slot, const Json& value, const std::string& key) {
  if (slot.is_object()) {
    if (!value.is_object()) throw ConfigError("'" + key + "' is a section and takes an object");
    for (const auto& [k, v] : value.items()) {
      const std::string sub = key.empty() ? k : key + "." + k;
      if (!slot.contains(k)) throw ConfigError("unknown config key '" + sub + "'");
      assign(slot[k], v, sub);
    }
    return;
  }
  if (!compatible(slot, value)) {
    throw ConfigError("'" + key + "' expects a " + std::string(slot.type_name()) + ", got " + value.dump());
  }
  if (value.is_number_integer() && !value.is_number_unsigned() && value.get<long long>() < 0) {
    throw ConfigError("'" + key + "' must be non-negative");
  }
  slot = value;
}

Json parse_value(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return text;
  }
}

template <typename T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config value '") + key + "': " + e.what());
  }
}

fs::path out_dir(const Json& cfg) {
  fs::path out = get<std::string>(cfg, "out");
  fs::create_directories(out);
  return out;
}

std::uint64_t seed_of(const Json& cfg) { return get<std::uint64_t>(cfg, "seed"); }

void require_file(const std::string& path, const std::string& what, const std::string& stage) {
  if (path.empty() || !fs::exists(path)) {
    throw ContractError(what + " '" + path + "' not found; run " + stage + " first");
  }
}

std::string container_kind(const std::string& path) { return read_container(path).kind; }

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << header << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(); }

struct LoadedCodec {
  std::unique_ptr<SvgCodec> svg;
  std::unique_ptr<BaselineCodec> baseline;
  CodecView view;
  std::string checksum;
  std::string semantic_checksum;
};

LoadedCodec load_any_codec(const std::string& path) {
  require_file(path, "codec checkpoint", "train-codec or train-baseline");
  LoadedCodec out;
  const std::string kind = container_kind(path);
  if (kind == "svg_codec") {
    out.svg = std::make_unique<SvgCodec>(load_codec(path));
    out.view = view_of(*out.svg);
    out.checksum = hex64(codec_checksum(*out.svg));
    out.semantic_checksum = hex64(out.svg->semantic_checksum);
  } else if (kind == "baseline_codec") {
    out.baseline = std::make_unique<BaselineCodec>(load_baseline(path));
    out.view = view_of(*out.baseline);
    out.checksum = hex64(baseline_checksum(*out.baseline));
  } else {
    throw FormatError("'" + path + "' is a " + kind + ", not a codec checkpoint");
  }
  return out;
}

struct LoadedFlow {
  VelocityNet net;
  FlowProvenance provenance;
  std::optional<LoadedCodec> codec;
  std::optional<MixtureSpec> mixture;
};

LoadedFlow load_flow_with_codec(const Json& cfg) {
  const std::string flow_path = get<std::string>(cfg, "flow");
  require_file(flow_path, "flow checkpoint", "train-flow");
  LoadedFlow lf;
  lf.net = load_flow(flow_path, &lf.provenance);
  if (lf.provenance.source == "mixture") {
    lf.mixture = mixture_from_json(lf.provenance.mixture);
    return lf;
  }
  std::string codec_path = get<std::string>(cfg, "codec");
  if (codec_path.empty()) codec_path = lf.provenance.codec_path;
  lf.codec = load_any_codec(codec_path);
  if (lf.codec->checksum != lf.provenance.codec_checksum) {
    throw ContractError("flow was trained on codec " + lf.provenance.codec_checksum + " but '" + codec_path +
                        "' is codec " + lf.codec->checksum + "; rerun train-flow against it");
  }
  if (lf.codec->view.encode && lf.net.feature_dim() != lf.codec->view.stats.channels()) {
    throw ContractError("flow and codec disagree on the feature width");
  }
  return lf;
}

VelocityNetConfig net_config(const Json& j, std::size_t features, int classes, std::uint64_t seed) {
  VelocityNetConfig c;
  c.feature_dim = features;
  c.num_classes = classes;
  c.hidden = get<std::vector<std::size_t>>(j, "hidden");
  c.time_dim = get<std::size_t>(j, "time_dim");
  c.class_dim = get<std::size_t>(j, "class_dim");
  c.activation = activation_from_string(get<std::string>(j, "activation"));
  const Json& a = j.at("attention");
  c.attention = {get<bool>(a, "enabled"), get<std::size_t>(a, "tokens"), get<std::size_t>(a, "heads"),
                 get<bool>(a, "qk_norm")};
  c.seed = seed;
  return c;
}

TrainConfig train_config(const Json& j, std::uint64_t seed) {
  TrainConfig c;
  c.batch = get<std::size_t>(j, "batch");
  c.iterations = get<std::size_t>(j, "iterations");
  c.optimizer.lr = get<double>(j, "lr");
  c.optimizer.weight_decay = get<double>(j, "weight_decay");
  c.schedule = lr_schedule_from_string(get<std::string>(j, "schedule"));
  c.min_lr_ratio = get<double>(j, "min_lr_ratio");
  c.label_drop_prob = get<double>(j, "label_drop_prob");
  c.log_every = get<std::size_t>(j, "log_every");
  c.seed = seed;
  return c;
}

SamplerConfig sampler_config(const Json& j, std::uint64_t seed) {
  SamplerConfig c;
  c.steps = get<std::size_t>(j, "steps");
  c.guidance = get<double>(j, "guidance");
  c.zero_init = get<bool>(j, "zero_init");
  c.shift = get<double>(j, "shift");
  c.seed = seed;
  c.validate();
  return c;
}

ShapeImageDataset load_shapes(const std::string& path) {
  require_file(path, "dataset", "gen-data");
  return read_dataset(path);
}

Json image_stats(const Tensor& images) {
  double sum = 0.0, sq = 0.0;
  for (double v : images.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(images.size());
  const double mean = sum / n;
  return {{"pixel_mean", mean}, {"pixel_std", std::sqrt(std::max(0.0, sq / n - mean * mean))}};
}

Json codec_quality(const CodecView& view, const ShapeImageDataset& ds) {
  const Tensor recon = view.decode(view.encode(ds.images));
  double ssim_sum = 0.0;
  const std::size_t n = ds.count();
  const std::size_t per = ds.pixel_count();
  const auto& shape = ds.images.shape();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a(ds.images.data().begin() + i * per, ds.images.data().begin() + (i + 1) * per);
    std::vector<double> b(recon.data().begin() + i * per, recon.data().begin() + (i + 1) * per);
    ssim_sum += ssim(Tensor({shape[1], shape[2], shape[3]}, std::move(a)),
                     Tensor({shape[1], shape[2], shape[3]}, std::move(b)));
  }
  return {{"psnr", finite_or_null(psnr(recon, ds.images))}, {"ssim", ssim_sum / static_cast<double>(n)}};
}

Tensor image_at(const Tensor& images, std::size_t index) {
  const auto& s = images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  std::vector<double> v(images.data().begin() + index * per, images.data().begin() + (index + 1) * per);
  return Tensor({s[1], s[2], s[3]}, std::move(v));
}

std::vector<int> class_list(const Json& cfg, std::size_t count, int classes) {
  std::vector<int> chosen = get<std::vector<int>>(cfg, "classes");
  for (int c : chosen) {
    if (c < 0 || c >= classes) throw ConfigError("class " + std::to_string(c) + " is outside [0, " + std::to_string(classes) + ")");
  }
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = chosen.empty() ? static_cast<int>(i % static_cast<std::size_t>(classes)) : chosen[i % chosen.size()];
  }
  return out;
}

Tensor grid_points(std::size_t size, double extent, std::size_t dim) {
  if (size < 2) throw ConfigError("grid.size must be at least 2");
  Tensor pts({size * size, dim}, 0.0);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      pts.at(i * size + j, 0) = -extent + 2.0 * extent * static_cast<double>(j) / static_cast<double>(size - 1);
      pts.at(i * size + j, 1) = -extent + 2.0 * extent * static_cast<double>(i) / static_cast<double>(size - 1);
    }
  }
  return pts;
}

Tensor class_conditional_draws(const MixtureSpec& spec, std::span<const int> classes, std::uint64_t seed) {
  Tensor out({classes.size(), spec.dim()}, 0.0);
  for (int k = 0; k < spec.num_classes(); ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == k) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const LabeledPoints pts = sample_mixture(spec.class_conditional(k), rows.size(), derive_seed(seed, static_cast<std::uint64_t>(k)));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(pts.points.row(r).begin(), pts.points.row(r).end(), out.row(rows[r]).begin());
    }
  }
  return out;
}

Json gen_data(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const std::string kind = get<std::string>(cfg, "kind");
  if (kind == "shapes") {
    const Json& s = cfg.at("shapes");
    const auto classes = get<std::size_t>(s, "classes");
    const auto size = get<std::size_t>(s, "size");
    const ShapeImageDataset train = gen_shapes(get<std::size_t>(s, "count"), classes, size, derive_seed(seed, 1));
    const ShapeImageDataset held = gen_shapes(get<std::size_t>(s, "held_out"), classes, size, derive_seed(seed, 2));
    write_dataset(out / "train.svgd", train);
    write_dataset(out / "held_out.svgd", held);
    std::vector<std::size_t> per_class(classes, 0);
    for (int l : train.labels) ++per_class[static_cast<std::size_t>(l)];
    Json m = {{"train_count", train.count()}, {"held_out_count", held.count()}, {"class_counts", per_class}};
    m.update(image_stats(train.images));
    return m;
  }
  if (kind == "mixture") {
    const Json& mx = cfg.at("mixture");
    const MixtureSpec spec = make_mixture(preset_from_string(get<std::string>(mx, "preset")), get<std::size_t>(mx, "dim"),
                                          get<std::uint64_t>(mx, "layout_seed"));
    const LabeledPoints pts = sample_mixture(spec, get<std::size_t>(mx, "count"), derive_seed(seed, 3));
    write_points(out / "points.svgd", pts, spec);
    const double dispersion = dispersion_score(pts.points, pts.labels);
    return {{"count", pts.labels.size()}, {"components", spec.components.size()}, {"dispersion", dispersion}};
  }
  throw ConfigError("gen-data kind must be 'shapes' or 'mixture', got '" + kind + "'");
}

Json train_semantic_cmd(const Json& cfg, const fs::path& out) {
  const ShapeImageDataset ds = load_shapes(get<std::string>(cfg, "data"));
  const Json& s = cfg.at("semantic");
  SemanticConfig sc;
  sc.hidden = get<std::vector<std::size_t>>(s, "hidden");
  sc.width = get<std::size_t>(s, "width");
  sc.epochs = get<std::size_t>(s, "epochs");
  sc.batch = get<std::size_t>(s, "batch");
  sc.lr = get<double>(s, "lr");
  sc.weight_decay = get<double>(s, "weight_decay");
  const SemanticEncoder enc = pretrain_semantic(ds, sc, derive_seed(seed_of(cfg), 10));
  save_semantic(out / "semantic.svgc", enc);
  return {{"train_accuracy", enc.meta.train_accuracy}, {"width", enc.width()}, {"checksum", hex64(enc.checksum())}};
}

Json train_codec_cmd(const Json& cfg, const fs::path& out) {
  const std::string sem_path = get<std::string>(cfg, "semantic");
  require_file(sem_path, "semantic encoder", "train-semantic");
  SemanticEncoder enc = load_semantic(sem_path);
  if (!enc.frozen()) throw ContractError("semantic encoder '" + sem_path + "' is not frozen; rerun train-semantic");
  const ShapeImageDataset ds = load_shapes(get<std::string>(cfg, "data"));
  const Json& c = cfg.at("codec");
  CodecConfig cc;
  cc.residual_width = get<std::size_t>(c, "residual_width");
  cc.residual_hidden = get<std::vector<std::size_t>>(c, "residual_hidden");
  cc.decoder_hidden = get<std::vector<std::size_t>>(c, "decoder_hidden");
  cc.align_weight = get<double>(c, "align_weight");
  cc.epochs = get<std::size_t>(c, "epochs");
  cc.batch = get<std::size_t>(c, "batch");
  cc.lr = get<double>(c, "lr");
  const std::uint64_t seed = seed_of(cfg);
  SvgCodec codec = SvgCodec::create(std::move(enc), cc, derive_seed(seed, 20));
  const CodecReport report = train_codec_stage1(codec, ds, derive_seed(seed, 21));
  save_codec(out / "codec.svgc", codec);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < report.loss_curve.size(); ++e) rows.push_back({static_cast<double>(e + 1), report.loss_curve[e]});
  write_csv(out / "loss.csv", "epoch,loss", rows);
  Json m = {{"final_recon_mse", report.final_recon_mse},
            {"final_penalty", report.final_penalty},
            {"semantic_checksum", hex64(codec.semantic_checksum)},
            {"codec_checksum", hex64(codec_checksum(codec))},
            {"train", codec_quality(view_of(codec), ds)}};
  const std::string held = get<std::string>(cfg, "held_out");
  if (!held.empty()) m["held_out"] = codec_quality(view_of(codec), load_shapes(held));
  return m;
}

Json train_baseline_cmd(const Json& cfg, const fs::path& out) {
  const ShapeImageDataset ds = load_shapes(get<std::string>(cfg, "data"));
  const Json& b = cfg.at("baseline");
  BaselineConfig bc;
  bc.latent_width = get<std::size_t>(b, "latent_width");
  bc.hidden = get<std::vector<std::size_t>>(b, "hidden");
  bc.decoder_hidden = get<std::vector<std::size_t>>(b, "decoder_hidden");
  bc.kl_weight = get<double>(b, "kl_weight");
  bc.epochs = get<std::size_t>(b, "epochs");
  bc.batch = get<std::size_t>(b, "batch");
  bc.lr = get<double>(b, "lr");
  CodecReport report;
  const BaselineCodec codec = train_baseline_vae(ds, bc, derive_seed(seed_of(cfg), 30), &report);
  save_baseline(out / "baseline.svgc", codec);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < report.loss_curve.size(); ++e) rows.push_back({static_cast<double>(e + 1), report.loss_curve[e]});
  write_csv(out / "loss.csv", "epoch,loss", rows);
  Json m = {{"final_recon_mse", report.final_recon_mse},
            {"codec_checksum", hex64(baseline_checksum(codec))},
            {"train", codec_quality(view_of(codec), ds)}};
  const std::string held = get<std::string>(cfg, "held_out");
  if (!held.empty()) m["held_out"] = codec_quality(view_of(codec), load_shapes(held));
  return m;
}

Json train_flow_cmd(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const std::string data_path = get<std::string>(cfg, "data");
  require_file(data_path, "dataset", "gen-data");
  FlowProvenance prov;
  prov.train = cfg.at("train");
  prov.train["weighting"] = "unit";
  prov.train["t_sampling"] = "uniform";
  Tensor features;
  std::vector<int> labels;
  int classes = 0;
  if (container_kind(data_path) == "point_dataset") {
    MixtureSpec spec;
    LabeledPoints pts = read_points(data_path, &spec);
    features = std::move(pts.points);
    labels = std::move(pts.labels);
    classes = spec.num_classes();
    prov.source = "mixture";
    prov.mixture = mixture_to_json(spec);
  } else {
    const std::string codec_path = get<std::string>(cfg, "codec");
    const LoadedCodec codec = load_any_codec(codec_path);
    const std::string sem_path = get<std::string>(cfg, "semantic");
    if (!sem_path.empty()) {
      require_file(sem_path, "semantic encoder", "train-semantic");
      const std::string given = hex64(load_semantic(sem_path).checksum());
      if (!codec.svg) throw ContractError("a semantic encoder was given but '" + codec_path + "' is not an SVG codec");
      if (given != codec.semantic_checksum) {
        throw ContractError("codec was trained against semantic encoder " + codec.semantic_checksum + " but '" +
                            sem_path + "' has checksum " + given + "; rerun train-codec");
      }
    }
    const ShapeImageDataset ds = read_dataset(data_path);
    if (ds.images.extent(1) != codec.view.shape.height || ds.images.extent(2) != codec.view.shape.width ||
        ds.images.extent(3) != codec.view.shape.channels) {
      throw ContractError("dataset image shape does not match the codec");
    }
    features = normalize(codec.view.encode(ds.images), codec.view.stats);
    labels = ds.labels;
    classes = static_cast<int>(ds.config.classes);
    prov.source = codec.svg ? "codec" : "baseline";
    prov.codec_path = codec_path;
    prov.semantic_checksum = codec.semantic_checksum;
    prov.codec_checksum = codec.checksum;
  }
  VelocityNet net = VelocityNet::init(net_config(cfg.at("net"), features.cols(), classes, derive_seed(seed, 40)));
  const TrainConfig tc = train_config(cfg.at("train"), derive_seed(seed, 41));
  const TrainReport report = train_flow(net, features, labels, Interpolant{}, tc);
  save_flow(out / "flow.svgc", net, prov);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
    rows.push_back({static_cast<double>(std::min((i + 1) * tc.log_every, report.iterations)), report.loss_curve[i]});
  }
  write_csv(out / "loss.csv", "iteration,loss", rows);
  return {{"source", prov.source},
          {"iterations", report.iterations},
          {"final_loss", report.final_loss},
          {"parameters", net.parameter_count()},
          {"feature_dim", features.cols()},
          {"checksum", hex64(parameter_checksum(std::as_const(net).parameters()))}};
}

Json sample_cmd(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const LoadedFlow lf = load_flow_with_codec(cfg);
  const SamplerConfig sc = sampler_config(cfg.at("sampler"), derive_seed(seed, 50));
  const std::size_t count = get<std::size_t>(cfg, "count");
  if (count == 0) throw ConfigError("count must be positive");
  const std::vector<int> classes = class_list(cfg, count, lf.net.config().num_classes);
  Rng rng(derive_seed(seed, 51));
  const Tensor noise = normal_tensor({count, lf.net.feature_dim()}, rng);
  const SampleResult res = euler_sample(lf.net, sc, noise, classes);
  Json m = {{"nfe", res.nfe}, {"count", count}, {"steps", sc.steps}, {"guidance", sc.guidance}};
  if (lf.mixture) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> r(res.x.row(i).begin(), res.x.row(i).end());
      r.push_back(classes[i]);
      rows.push_back(std::move(r));
    }
    std::string header;
    for (std::size_t d = 0; d < lf.net.feature_dim(); ++d) header += "x" + std::to_string(d) + ",";
    write_csv(out / "samples.csv", header + "class", rows);
    const Tensor target = class_conditional_draws(*lf.mixture, classes, derive_seed(seed, 52));
    m["sw2"] = sliced_wasserstein(res.x, target, 64, derive_seed(seed, 53));
    return m;
  }
  const Tensor images = lf.codec->view.decode(denormalize(res.x, lf.codec->view.stats));
  write_pnm(out / "grid.ppm", tile_images(images, get<std::size_t>(cfg, "columns")));
  m.update(image_stats(images));
  return m;
}

Json edit_cmd(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const LoadedFlow lf = load_flow_with_codec(cfg);
  if (!lf.codec) throw ContractError("edit needs a flow trained on codec features");
  const ShapeImageDataset ds = load_shapes(get<std::string>(cfg, "data"));
  const std::size_t index = get<std::size_t>(cfg, "index");
  if (index >= ds.count()) throw ConfigError("index " + std::to_string(index) + " is past the dataset end");
  const Tensor image = image_at(ds.images, index);
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  const Json& mk = cfg.at("mask");
  const auto top = get<std::size_t>(mk, "top"), left = get<std::size_t>(mk, "left");
  const auto mh = get<std::size_t>(mk, "height"), mw = get<std::size_t>(mk, "width");
  Tensor raw({h, w}, 0.0);
  for (std::size_t y = top; y < std::min(h, top + mh); ++y) {
    for (std::size_t x = left; x < std::min(w, left + mw); ++x) raw.at(y, x) = 1.0;
  }
  const Json& e = cfg.at("edit");
  EditConfig ec;
  ec.t_edit = get<double>(e, "t_edit");
  ec.steps = get<std::size_t>(e, "steps");
  ec.guidance = get<double>(e, "guidance");
  ec.shift = get<double>(e, "shift");
  ec.blur_sigma = get<double>(e, "blur_sigma");
  ec.seed = derive_seed(seed, 60);
  const EditMask mask = soften_mask(raw, ec.blur_sigma, ec.steps);
  const int new_class = get<int>(cfg, "new_class");
  if (new_class < 0 || new_class >= lf.net.config().num_classes) throw ConfigError("new_class is out of range");
  const EditResult res = masked_edit(lf.net, lf.codec->view, image, mask, ds.labels[index], new_class, ec);

  std::vector<double> kept_edit, kept_recon, changed_edit, changed_recon;
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = p * ch + c;
      auto& a = mask.softened[p] == 0.0 ? kept_edit : changed_edit;
      auto& b = mask.softened[p] == 0.0 ? kept_recon : changed_recon;
      a.push_back(res.edited[i]);
      b.push_back(res.reconstruction[i]);
    }
  }
  Tensor mask_img({h, w, ch}, 0.0);
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < ch; ++c) mask_img[p * ch + c] = mask.softened[p];
  }
  Tensor panels({4, h, w, ch}, 0.0);
  const Tensor* parts[] = {&image, &mask_img, &res.reconstruction, &res.edited};
  for (std::size_t k = 0; k < 4; ++k) {
    std::copy(parts[k]->data().begin(), parts[k]->data().end(), panels.data().begin() + k * h * w * ch);
  }
  write_pnm(out / "triptych.ppm", tile_images(panels, 4));
  return {{"source_class", ds.labels[index]},
          {"new_class", new_class},
          {"nfe", res.nfe},
          {"preserved_relative_l2", kept_edit.empty() ? Json() : Json(relative_l2(kept_edit, kept_recon))},
          {"edited_relative_change", changed_edit.empty() ? Json() : Json(relative_l2(changed_edit, changed_recon))},
          {"reconstruction_psnr", finite_or_null(psnr(res.reconstruction, image))}};
}

Json interpolate_cmd(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const LoadedFlow lf = load_flow_with_codec(cfg);
  if (!lf.codec) throw ContractError("interpolate needs a flow trained on codec features");
  const SamplerConfig sc = sampler_config(cfg.at("sampler"), derive_seed(seed, 70));
  const std::size_t frames = get<std::size_t>(cfg, "frames");
  if (frames < 2) throw ConfigError("frames must be at least 2");
  const int cls = get<int>(cfg, "class");
  if (cls < 0 || cls >= lf.net.config().num_classes) throw ConfigError("class is out of range");
  const InterpolationMode mode = interpolation_mode_from_string(get<std::string>(cfg, "mode"));
  Rng rng(derive_seed(seed, 71));
  const Tensor n0 = normal_tensor({1, lf.net.feature_dim()}, rng);
  const Tensor n1 = normal_tensor({1, lf.net.feature_dim()}, rng);
  std::vector<double> lambdas(frames);
  for (std::size_t i = 0; i < frames; ++i) lambdas[i] = static_cast<double>(i) / static_cast<double>(frames - 1);
  const Tensor seq = interpolation_sweep(lf.net, lf.codec->view, n0, n1, cls, mode, lambdas, sc);
  write_pnm(out / "frames.ppm", tile_images(seq, frames));
  const ContinuityStats cs = frame_continuity(seq);
  return {{"mode", to_string(mode)}, {"frames", frames}, {"adjacent_l2", cs.adjacent},
          {"max_step", cs.max},      {"mean_step", cs.mean}, {"max_over_mean", cs.ratio}};
}

Json analyze_codec(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const LoadedCodec codec = load_any_codec(get<std::string>(cfg, "codec"));
  if (!codec.svg) throw ContractError("analyze target 'codec' needs an SVG codec from train-codec");
  const ShapeImageDataset ds = load_shapes(get<std::string>(cfg, "data"));
  const Tensor svg = svg_encode(*codec.svg, ds.images);
  const Tensor sem = codec.svg->semantic.encode(ds.images);
  const auto epochs = get<std::size_t>(cfg, "probe_epochs");
  const std::uint64_t split = derive_seed(seed, 80);
  const auto k = get<std::size_t>(cfg, "pca_components");
  const PcaResult pca = pca_project(svg, k);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < ds.count(); ++i) {
    std::vector<double> r(pca.projected.row(i).begin(), pca.projected.row(i).end());
    r.push_back(ds.labels[i]);
    rows.push_back(std::move(r));
  }
  std::string header;
  for (std::size_t j = 0; j < k; ++j) header += "pc" + std::to_string(j) + ",";
  write_csv(out / "pca.csv", header + "class", rows);
  return {{"dispersion", {{"semantic", dispersion_score(sem, ds.labels)}, {"svg", dispersion_score(svg, ds.labels)}}},
          {"probe", {{"semantic", linear_probe(sem, ds.labels, split, epochs)}, {"svg", linear_probe(svg, ds.labels, split, epochs)}}},
          {"pca_explained_ratio", pca.explained_ratio},
          {"semantic_checksum", codec.semantic_checksum}};
}

Json analyze_mixture(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const std::string flow_path = get<std::string>(cfg, "flow");
  MixtureSpec spec;
  std::optional<VelocityNet> net;
  if (!flow_path.empty()) {
    require_file(flow_path, "flow checkpoint", "train-flow");
    FlowProvenance prov;
    net = load_flow(flow_path, &prov);
    if (prov.source != "mixture") throw ContractError("analyze target 'mixture' needs a flow trained on mixture points");
    spec = mixture_from_json(prov.mixture);
  } else {
    spec = make_mixture(preset_from_string(get<std::string>(cfg, "preset")), 2, get<std::uint64_t>(cfg, "layout_seed"));
  }
  if (spec.dim() != 2) throw ConfigError("mixture analysis works on 2-D mixtures");
  const double t = get<double>(cfg, "t");
  const Tensor grid = grid_points(get<std::size_t>(cfg.at("grid"), "size"), get<double>(cfg.at("grid"), "extent"), 2);
  const VelocityField oracle = oracle_field(spec, true);
  std::vector<FieldSample> samples;
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < spec.num_classes(); ++k) {
    const std::vector<int> cls(grid.rows(), k);
    Tensor v;
    if (net) {
      const std::vector<double> ts(grid.rows(), t);
      v = net->forward(grid, ts, cls);
    } else {
      v = oracle(grid, t, cls);
    }
    for (std::size_t i = 0; i < grid.rows(); ++i) {
      samples.push_back({{grid.at(i, 0), grid.at(i, 1)}, k, {v.at(i, 0), v.at(i, 1)}});
      rows.push_back({grid.at(i, 0), grid.at(i, 1), static_cast<double>(k), v.at(i, 0), v.at(i, 1)});
    }
  }
  write_csv(out / "velocity_grid.csv", "x,y,class,vx,vy", rows);
  const CoherenceReport rep = velocity_coherence(samples);
  Json coh = Json::object();
  for (const auto& [k, c] : rep.coherence) coh[std::to_string(k)] = c;
  const LabeledPoints pts = sample_mixture(spec, 4000, derive_seed(seed, 81));
  return {{"field", net ? "trained" : "oracle"},
          {"t", t},
          {"coherence", coh},
          {"mean_coherence", rep.mean_coherence()},
          {"divergence", rep.divergence},
          {"dispersion", dispersion_score(pts.points, pts.labels)}};
}

Json oracle_cmd(const Json& cfg, const fs::path& out) {
  const std::uint64_t seed = seed_of(cfg);
  const std::size_t dim = get<std::size_t>(cfg, "dim");
  const MixtureSpec spec = make_mixture(preset_from_string(get<std::string>(cfg, "preset")), dim, get<std::uint64_t>(cfg, "layout_seed"));
  Json m;
  if (dim == 2) {
    const double t = get<double>(cfg, "t");
    const Tensor grid = grid_points(get<std::size_t>(cfg.at("grid"), "size"), get<double>(cfg.at("grid"), "extent"), 2);
    const Tensor v = oracle_velocity(spec, grid, t);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < grid.rows(); ++i) rows.push_back({grid.at(i, 0), grid.at(i, 1), v.at(i, 0), v.at(i, 1)});
    write_csv(out / "velocity_grid.csv", "x,y,vx,vy", rows);
  }
  const Json& mc = cfg.at("mc");
  const auto points = get<std::size_t>(mc, "points");
  const auto samples = get<std::size_t>(mc, "samples");
  Rng rng(derive_seed(seed, 90));
  std::uniform_real_distribution<double> tdist(0.05, 0.95);
  std::vector<double> errs, mc_all, oracle_all;
  for (std::size_t i = 0; i < points; ++i) {
    const double t = tdist(rng);
    const LabeledPoints x0 = sample_mixture(spec, 1, derive_seed(seed, 1000 + i));
    const Tensor eps = normal_tensor({1, dim}, rng);
    Tensor x({dim}, 0.0);
    for (std::size_t d = 0; d < dim; ++d) x[d] = (1 - t) * x0.points[d] + t * eps[d];
    const Tensor a = oracle_velocity(spec, x, t);
    const Tensor b = mc_velocity(spec, x, t, samples, derive_seed(seed, 2000 + i));
    errs.push_back(relative_l2(b.data(), a.data()));
    oracle_all.insert(oracle_all.end(), a.data().begin(), a.data().end());
    mc_all.insert(mc_all.end(), b.data().begin(), b.data().end());
  }
  const double worst = errs.empty() ? 0.0 : *std::max_element(errs.begin(), errs.end());
  m["mc"] = {{"points", points},
             {"samples", samples},
             {"relative_l2", points ? Json(relative_l2(mc_all, oracle_all)) : Json()},
             {"pointwise_relative_l2_max", worst}};

  const Json& g = cfg.at("gap");
  const VelocityField field = oracle_field(spec, true);
  const int classes = spec.num_classes();
  const BudgetSampler gen = [&](std::size_t steps, std::size_t n, std::uint64_t s) {
    Rng r(s);
    const Tensor noise = normal_tensor({n, dim}, r);
    std::vector<int> cls(n);
    std::uniform_int_distribution<int> cd(0, classes - 1);
    for (auto& c : cls) c = cd(r);
    return oracle_sample(field, noise, cls, steps);
  };
  const TargetSampler target = [&](std::size_t n, std::uint64_t s) { return sample_mixture(spec, n, s).points; };
  const FewStepGap gap = few_step_gap(gen, target, get<std::size_t>(g, "low"), get<std::size_t>(g, "high"),
                                      get<std::size_t>(g, "count"), derive_seed(seed, 91), get<std::size_t>(g, "projections"));
  m["few_step_gap"] = {{"sw2_low", gap.sw2_low}, {"sw2_high", gap.sw2_high}, {"gap", gap.gap}};
  const LabeledPoints pts = sample_mixture(spec, 4000, derive_seed(seed, 92));
  m["dispersion"] = dispersion_score(pts.points, pts.labels);
  return m;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : defaults_table()) n.push_back(k);
    return n;
  }();
  return names;
}

Json default_config(const std::string& command) {
  const auto& t = defaults_table();
  const auto it = t.find(command);
  if (it == t.end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

Json resolve_config(const std::string& command, const Json& file_config,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  Json cfg = default_config(command);
  if (!file_config.is_null()) assign(cfg, file_config, "");
  for (const auto& [key, text] : overrides) {
    const std::vector<std::string> parts = split_path(key);
    Json* slot = &cfg;
    for (const auto& p : parts) {
      if (!slot->is_object() || !slot->contains(p)) throw ConfigError("unknown config key '" + key + "'");
      slot = &(*slot)[p];
    }
    Json value = parse_value(text);
    if (slot->is_string() && !value.is_string()) value = text;
    assign(*slot, value, key);
  }
  return cfg;
}

Json run_command(const std::string& command, const Json& config) {
  const Json cfg = resolve_config(command, config, {});
  const fs::path out = out_dir(cfg);
  write_json(out / "resolved_config.json", Json{{"command", command}, {"config", cfg}});
  Json metrics;
  if (command == "gen-data") {
    metrics = gen_data(cfg, out);
  } else if (command == "train-semantic") {
    metrics = train_semantic_cmd(cfg, out);
  } else if (command == "train-codec") {
    metrics = train_codec_cmd(cfg, out);
  } else if (command == "train-baseline") {
    metrics = train_baseline_cmd(cfg, out);
  } else if (command == "train-flow") {
    metrics = train_flow_cmd(cfg, out);
  } else if (command == "sample") {
    metrics = sample_cmd(cfg, out);
  } else if (command == "edit") {
    metrics = edit_cmd(cfg, out);
  } else if (command == "interpolate") {
    metrics = interpolate_cmd(cfg, out);
  } else if (command == "analyze") {
    const std::string target = get<std::string>(cfg, "target");
    if (target == "codec") {
      metrics = analyze_codec(cfg, out);
    } else if (target == "mixture") {
      metrics = analyze_mixture(cfg, out);
    } else {
      throw ConfigError("analyze target must be 'codec' or 'mixture'");
    }
  } else if (command == "oracle") {
    metrics = oracle_cmd(cfg, out);
  }
  Json record = {{"command", command}, {"seed", seed_of(cfg)}, {"metrics", metrics}};
  write_json(out / "metrics.json", record);
  return record;
}

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config:
      return 2;
    case ErrorCategory::io:
      return 3;
    case ErrorCategory::numeric:
      return 4;
    case ErrorCategory::contract:
      return 5;
  }
  return 1;
}

}  // namespace svgl
