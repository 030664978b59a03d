#include "svgl/checkpoint.hpp"

#include <cstdio>

#include "svgl/error.hpp"

namespace svgl {

namespace {

void put_mlp(Container& c, const std::string& prefix, const Mlp& mlp) {
  c.meta[prefix] = {{"dims", mlp.layer_dims()}, {"activation", to_string(mlp.activation())}};
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    const auto& layer = mlp.layers()[i];
    c.arrays.push_back({prefix + "." + std::to_string(i) + ".weight", Dtype::f32, layer.weight});
    c.arrays.push_back({prefix + "." + std::to_string(i) + ".bias", Dtype::f32, layer.bias});
  }
}

Mlp get_mlp(const Container& c, const std::string& prefix) {
  if (!c.meta.contains(prefix)) throw FormatError("checkpoint is missing network '" + prefix + "'");
  const auto dims = c.meta.at(prefix).at("dims").get<std::vector<std::size_t>>();
  const Activation act = activation_from_string(c.meta.at(prefix).at("activation").get<std::string>());
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l{c.array(prefix + "." + std::to_string(i) + ".weight").values,
                 c.array(prefix + "." + std::to_string(i) + ".bias").values};
    if (l.weight.shape() != std::vector<std::size_t>{dims[i], dims[i + 1]} || l.bias.size() != dims[i + 1]) {
      throw FormatError("network '" + prefix + "' layer " + std::to_string(i) + " has the wrong shape");
    }
    layers.push_back(std::move(l));
  }
  return Mlp::from_layers(std::move(layers), act);
}

void put_stats(Container& c, const std::string& prefix, const ChannelStats& s) {
  c.arrays.push_back({prefix + ".mean", Dtype::f64, s.mean});
  c.arrays.push_back({prefix + ".std", Dtype::f64, s.std});
  c.meta[prefix] = {{"population", s.population}};
}

ChannelStats get_stats(const Container& c, const std::string& prefix) {
  ChannelStats s;
  s.mean = c.array(prefix + ".mean").values;
  s.std = c.array(prefix + ".std").values;
  s.population = c.meta.at(prefix).at("population");
  return s;
}

Json shape_json(const ImageShape& s) { return {{"height", s.height}, {"width", s.width}, {"channels", s.channels}}; }

ImageShape shape_from(const Json& j) { return {j.at("height"), j.at("width"), j.at("channels")}; }

Container expect(const std::filesystem::path& path, const std::string& kind) {
  Container c = read_container(path);
  if (c.kind != kind) throw FormatError("'" + path.string() + "' holds a " + c.kind + ", expected " + kind);
  return c;
}

void put_semantic(Container& c, const SemanticEncoder& e) {
  put_mlp(c, "semantic", e.backbone());
  c.meta["image_shape"] = shape_json(e.image_shape());
  c.meta["semantic_meta"] = {{"train_accuracy", e.meta.train_accuracy},
                             {"epochs", e.meta.epochs},
                             {"samples", e.meta.samples},
                             {"seed", e.meta.seed},
                             {"frozen", e.frozen()},
                             {"checksum", hex64(e.checksum())}};
}

SemanticEncoder get_semantic(const Container& c) {
  SemanticEncoder e(get_mlp(c, "semantic"), shape_from(c.meta.at("image_shape")));
  const Json& m = c.meta.at("semantic_meta");
  e.meta = {m.at("train_accuracy"), m.at("epochs"), m.at("samples"), m.at("seed")};
  if (m.at("frozen").get<bool>()) e.freeze();
  if (hex64(e.checksum()) != m.at("checksum").get<std::string>()) {
    throw ContractError("semantic encoder parameters do not match their recorded checksum");
  }
  return e;
}

}  // namespace

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t codec_checksum(const SvgCodec& codec) { return parameter_checksum(codec.trainable_parameters()); }

std::uint64_t baseline_checksum(const BaselineCodec& codec) {
  std::vector<const Tensor*> p = codec.encoder.parameters();
  for (const Tensor* t : codec.decoder.parameters()) p.push_back(t);
  return parameter_checksum(p);
}

Json mixture_to_json(const MixtureSpec& spec) {
  Json comps = Json::array();
  for (const auto& c : spec.components) {
    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"var", c.var}, {"class", c.class_id}});
  }
  return comps;
}

MixtureSpec mixture_from_json(const Json& j) {
  MixtureSpec spec;
  for (const auto& c : j) spec.components.push_back({c.at("weight"), c.at("mean").get<std::vector<double>>(), c.at("var"), c.at("class")});
  spec.validate();
  return spec;
}

void save_semantic(const std::filesystem::path& path, const SemanticEncoder& encoder) {
  Container c;
  c.kind = "semantic_encoder";
  put_semantic(c, encoder);
  write_container(path, c);
}

SemanticEncoder load_semantic(const std::filesystem::path& path) {
  return get_semantic(expect(path, "semantic_encoder"));
}

void save_codec(const std::filesystem::path& path, const SvgCodec& codec) {
  if (!codec.trained) throw ContractError("refusing to save a codec before stage 1");
  Container c;
  c.kind = "svg_codec";
  put_semantic(c, codec.semantic);
  if (codec.config.residual_width > 0) put_mlp(c, "residual", codec.residual);
  put_mlp(c, "decoder", codec.decoder);
  put_stats(c, "stats", codec.stats);
  c.meta["codec"] = {{"residual_width", codec.config.residual_width},
                     {"residual_hidden", codec.config.residual_hidden},
                     {"decoder_hidden", codec.config.decoder_hidden},
                     {"align_weight", codec.config.align_weight},
                     {"epochs", codec.config.epochs},
                     {"batch", codec.config.batch},
                     {"lr", codec.config.lr},
                     {"target_mean", codec.target.mean},
                     {"target_std", codec.target.std},
                     {"semantic_checksum", hex64(codec.semantic_checksum)}};
  write_container(path, c);
}

SvgCodec load_codec(const std::filesystem::path& path) {
  const Container c = expect(path, "svg_codec");
  SvgCodec codec;
  codec.semantic = get_semantic(c);
  const Json& m = c.meta.at("codec");
  codec.config.residual_width = m.at("residual_width");
  codec.config.residual_hidden = m.at("residual_hidden").get<std::vector<std::size_t>>();
  codec.config.decoder_hidden = m.at("decoder_hidden").get<std::vector<std::size_t>>();
  codec.config.align_weight = m.at("align_weight");
  codec.config.epochs = m.at("epochs");
  codec.config.batch = m.at("batch");
  codec.config.lr = m.at("lr");
  codec.target = {m.at("target_mean"), m.at("target_std")};
  if (hex64(codec.semantic.checksum()) != m.at("semantic_checksum").get<std::string>()) {
    throw ContractError("codec '" + path.string() + "' was trained against a different semantic encoder");
  }
  codec.semantic_checksum = codec.semantic.checksum();
  if (codec.config.residual_width > 0) codec.residual = get_mlp(c, "residual");
  codec.decoder = get_mlp(c, "decoder");
  codec.stats = get_stats(c, "stats");
  if (codec.decoder.input_width() != codec.feature_width() || codec.stats.channels() != codec.feature_width()) {
    throw FormatError("codec parts disagree on the feature width");
  }
  codec.trained = true;
  return codec;
}

void save_baseline(const std::filesystem::path& path, const BaselineCodec& codec) {
  Container c;
  c.kind = "baseline_codec";
  put_mlp(c, "encoder", codec.encoder);
  put_mlp(c, "decoder", codec.decoder);
  put_stats(c, "stats", codec.stats);
  c.meta["image_shape"] = shape_json(codec.shape);
  c.meta["baseline"] = {{"latent_width", codec.config.latent_width}, {"hidden", codec.config.hidden},
                        {"decoder_hidden", codec.config.decoder_hidden}, {"kl_weight", codec.config.kl_weight},
                        {"epochs", codec.config.epochs}, {"batch", codec.config.batch}, {"lr", codec.config.lr}};
  write_container(path, c);
}

BaselineCodec load_baseline(const std::filesystem::path& path) {
  const Container c = expect(path, "baseline_codec");
  BaselineCodec codec;
  codec.encoder = get_mlp(c, "encoder");
  codec.decoder = get_mlp(c, "decoder");
  codec.stats = get_stats(c, "stats");
  codec.shape = shape_from(c.meta.at("image_shape"));
  const Json& m = c.meta.at("baseline");
  codec.config.latent_width = m.at("latent_width");
  codec.config.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  codec.config.decoder_hidden = m.at("decoder_hidden").get<std::vector<std::size_t>>();
  codec.config.kl_weight = m.at("kl_weight");
  codec.config.epochs = m.at("epochs");
  codec.config.batch = m.at("batch");
  codec.config.lr = m.at("lr");
  codec.trained = true;
  return codec;
}

void save_flow(const std::filesystem::path& path, const VelocityNet& net, const FlowProvenance& provenance) {
  const VelocityNetConfig& cfg = net.config();
  Container c;
  c.kind = "velocity_net";
  put_mlp(c, "stem", net.stem());
  put_mlp(c, "head", net.head());
  c.arrays.push_back({"class_table", Dtype::f32, net.class_table()});
  if (net.attention()) {
    const AttentionBlock& a = *net.attention();
    c.arrays.push_back({"attention.wq", Dtype::f32, a.wq});
    c.arrays.push_back({"attention.wk", Dtype::f32, a.wk});
    c.arrays.push_back({"attention.wv", Dtype::f32, a.wv});
    c.arrays.push_back({"attention.wo", Dtype::f32, a.wo});
    c.arrays.push_back({"attention.log_temperature", Dtype::f32, a.log_temperature});
  }
  c.meta["net"] = {{"feature_dim", cfg.feature_dim},
                   {"num_classes", cfg.num_classes},
                   {"time_dim", cfg.time_dim},
                   {"class_dim", cfg.class_dim},
                   {"hidden", cfg.hidden},
                   {"activation", to_string(cfg.activation)},
                   {"attention",
                    {{"enabled", cfg.attention.enabled},
                     {"tokens", cfg.attention.tokens},
                     {"heads", cfg.attention.heads},
                     {"qk_norm", cfg.attention.qk_norm}}},
                   {"zero_init_output", cfg.zero_init_output},
                   {"seed", cfg.seed}};
  c.meta["provenance"] = {{"source", provenance.source},
                          {"codec_path", provenance.codec_path},
                          {"semantic_checksum", provenance.semantic_checksum},
                          {"codec_checksum", provenance.codec_checksum},
                          {"train", provenance.train}};
  if (!provenance.mixture.is_null()) c.meta["provenance"]["mixture"] = provenance.mixture;
  write_container(path, c);
}

VelocityNet load_flow(const std::filesystem::path& path, FlowProvenance* provenance) {
  const Container c = expect(path, "velocity_net");
  const Json& m = c.meta.at("net");
  VelocityNetConfig cfg;
  cfg.feature_dim = m.at("feature_dim");
  cfg.num_classes = m.at("num_classes");
  cfg.time_dim = m.at("time_dim");
  cfg.class_dim = m.at("class_dim");
  cfg.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  cfg.activation = activation_from_string(m.at("activation").get<std::string>());
  cfg.attention.enabled = m.at("attention").at("enabled");
  cfg.attention.tokens = m.at("attention").at("tokens");
  cfg.attention.heads = m.at("attention").at("heads");
  cfg.attention.qk_norm = m.at("attention").at("qk_norm");
  cfg.zero_init_output = m.at("zero_init_output");
  cfg.seed = m.at("seed");
  std::optional<AttentionBlock> attention;
  if (cfg.attention.enabled) {
    AttentionBlock a;
    a.wq = c.array("attention.wq").values;
    a.wk = c.array("attention.wk").values;
    a.wv = c.array("attention.wv").values;
    a.wo = c.array("attention.wo").values;
    a.log_temperature = c.array("attention.log_temperature").values;
    a.width = a.wq.extent(0);
    a.heads = cfg.attention.heads;
    a.qk_norm = cfg.attention.qk_norm;
    attention = std::move(a);
  }
  VelocityNet net = VelocityNet::from_parts(cfg, get_mlp(c, "stem"), std::move(attention), get_mlp(c, "head"),
                                            c.array("class_table").values);
  if (provenance) {
    const Json& p = c.meta.at("provenance");
    provenance->source = p.at("source");
    provenance->codec_path = p.at("codec_path");
    provenance->semantic_checksum = p.at("semantic_checksum");
    provenance->codec_checksum = p.at("codec_checksum");
    provenance->train = p.at("train");
    provenance->mixture = p.contains("mixture") ? p.at("mixture") : Json();
  }
  return net;
}

}  // namespace svgl
