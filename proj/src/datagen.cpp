#include "svgl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/QR>

#include "svgl/error.hpp"
#include "svgl/io.hpp"

namespace svgl {

std::size_t MixtureSpec::dim() const {
  if (components.empty()) throw ConfigError("mixture has no components");
  return components.front().mean.size();
}

int MixtureSpec::num_classes() const {
  int k = 0;
  for (const auto& c : components) k = std::max(k, c.class_id + 1);
  return k;
}

void MixtureSpec::validate() const {
  const std::size_t d = dim();
  double total = 0.0;
  for (const auto& c : components) {
    if (c.mean.size() != d) throw ConfigError("mixture component means differ in dimension");
    if (!(c.weight > 0.0) || !(c.var > 0.0) || c.class_id < 0) {
      throw ConfigError("mixture components need positive weight, positive variance, class >= 0");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to one");
}

MixtureSpec MixtureSpec::class_conditional(int class_id) const {
  MixtureSpec out;
  double total = 0.0;
  for (const auto& c : components) {
    if (c.class_id == class_id) {
      out.components.push_back(c);
      total += c.weight;
    }
  }
  if (out.components.empty()) throw ConfigError("mixture has no components for class " + std::to_string(class_id));
  for (auto& c : out.components) c.weight /= total;
  return out;
}

double MixtureSpec::class_weight(int class_id) const {
  double w = 0.0;
  for (const auto& c : components)
    if (c.class_id == class_id) w += c.weight;
  return w;
}

std::vector<double> MixtureSpec::class_centroid(int class_id) const {
  return class_conditional(class_id).pooled_mean();
}

std::vector<double> MixtureSpec::pooled_mean() const {
  std::vector<double> mean(dim(), 0.0);
  for (const auto& c : components)
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += c.weight * c.mean[j];
  return mean;
}

std::vector<double> MixtureSpec::pooled_covariance() const {
  const std::size_t d = dim();
  const auto mu = pooled_mean();
  std::vector<double> cov(d * d, 0.0);
  for (const auto& c : components) {
    for (std::size_t i = 0; i < d; ++i) {
      cov[i * d + i] += c.weight * c.var;
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += c.weight * (c.mean[i] - mu[i]) * (c.mean[j] - mu[j]);
    }
  }
  return cov;
}

MixturePreset preset_from_string(const std::string& name) {
  if (name == "dispersed") return MixturePreset::dispersed;
  if (name == "entangled") return MixturePreset::entangled;
  throw ConfigError("unknown mixture preset '" + name + "'");
}

const char* to_string(MixturePreset preset) {
  return preset == MixturePreset::dispersed ? "dispersed" : "entangled";
}

MixtureSpec make_mixture(MixturePreset preset, std::size_t dim, std::uint64_t seed, const MixtureLayout& layout) {
  if (dim < 1) throw ConfigError("mixture dimension must be >= 1");
  if (!(layout.var > 0.0) || !(layout.spacing > 0.0)) throw ConfigError("mixture layout needs positive spacing and var");
  const double xs[4] = {-3.0 * layout.spacing, -layout.spacing, layout.spacing, 3.0 * layout.spacing};
  std::vector<double> ys = dim >= 2 ? std::vector<double>{-layout.offset, layout.offset} : std::vector<double>{0.0};

  MixtureSpec spec;
  const double weight = 1.0 / static_cast<double>(4 * ys.size());
  for (int ix = 0; ix < 4; ++ix) {
    for (std::size_t iy = 0; iy < ys.size(); ++iy) {
      MixtureComponent c;
      c.weight = weight;
      c.var = layout.var;
      c.mean.assign(dim, 0.0);
      c.mean[0] = xs[ix];
      if (dim >= 2) c.mean[1] = ys[iy];
      if (preset == MixturePreset::dispersed) {
        c.class_id = ix >= 2 ? 1 : 0;
      } else if (dim >= 2) {
        c.class_id = (ix + static_cast<int>(iy)) % 2;
      } else {
        // outer pair vs inner pair: both class centroids at the origin
        c.class_id = (ix == 0 || ix == 3) ? 0 : 1;
      }
      spec.components.push_back(std::move(c));
    }
  }

  if (seed != 0 && dim >= 2) {
    Rng rng(seed);
    Eigen::MatrixXd g(dim, dim);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = standard_normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (r(j, j) < 0) q.col(j) = -q.col(j);
    for (auto& c : spec.components) {
      Eigen::Map<Eigen::VectorXd> m(c.mean.data(), static_cast<Eigen::Index>(dim));
      const Eigen::VectorXd rotated = q * m;
      m = rotated;
    }
  }
  return spec;
}

LabeledPoints sample_mixture(const MixtureSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_mixture needs n >= 1");
  spec.validate();
  const std::size_t d = spec.dim();
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : spec.components) cumulative.push_back(acc += c.weight);

  Rng rng(seed);
  LabeledPoints out{Tensor({n, d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng) * acc;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                              cumulative.begin());
    k = std::min(k, spec.components.size() - 1);
    const auto& comp = spec.components[k];
    const double sd = std::sqrt(comp.var);
    auto row = out.points.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = comp.mean[j] + sd * standard_normal(rng);
    out.labels[i] = comp.class_id;
  }
  return out;
}

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
    case ShapeKind::ring: return "ring";
    case ShapeKind::diamond: return "diamond";
  }
  return "?";
}

namespace {

// (u, v) in shape-local units, v pointing down.
bool inside(ShapeKind kind, double u, double v) {
  switch (kind) {
    case ShapeKind::disc: return u * u + v * v <= 1.0;
    case ShapeKind::square: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case ShapeKind::triangle: {
      // apex (0, -0.95), base corners (+-0.95, 0.75)
      if (v > 0.75 || v < -0.95) return false;
      const double half_width = 0.95 * (v + 0.95) / 1.7;
      return std::abs(u) <= half_width;
    }
    case ShapeKind::cross:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case ShapeKind::diamond: return std::abs(u) + std::abs(v) <= 1.0;
  }
  return false;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
    case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
    case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
    case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
    case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
    default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
  }
}

}  // namespace

Tensor ShapeImageDataset::flat() const { return images.reshaped({count(), pixel_count()}); }

ShapeImageDataset ShapeImageDataset::subset(std::span<const std::size_t> indices) const {
  ShapeImageDataset out;
  out.images = images.gather_rows(indices);
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.config = config;
  out.config.count = indices.size();
  return out;
}

ShapeImageDataset gen_shapes(std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed) {
  ShapeGeneratorConfig config;
  config.count = n;
  config.classes = classes;
  config.size = size;
  config.seed = seed;
  return gen_shapes(config);
}

ShapeImageDataset gen_shapes(const ShapeGeneratorConfig& config) {
  if (config.count < 1) throw ConfigError("gen_shapes needs n >= 1");
  if (config.classes < 1 || config.classes > kShapeKindCount) {
    throw ConfigError("gen_shapes supports between 1 and " + std::to_string(kShapeKindCount) + " classes");
  }
  if (config.size < 4) throw ConfigError("gen_shapes image size must be >= 4");
  if (config.channels != 3 && config.channels != 1) throw ConfigError("gen_shapes supports 1 or 3 channels");

  const std::size_t n = config.count, s = config.size, ch = config.channels;
  Rng rng(config.seed);
  ShapeImageDataset out;
  out.config = config;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % config.classes);
  std::shuffle(out.labels.begin(), out.labels.end(), rng);
  out.images = Tensor({n, s, s, ch}, config.background);

  constexpr int kSuper = 4;
  const double side = static_cast<double>(s);
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = static_cast<ShapeKind>(out.labels[i]);
    const double cx = side * (0.5 + config.center_jitter * (2.0 * uniform01(rng) - 1.0));
    const double cy = side * (0.5 + config.center_jitter * (2.0 * uniform01(rng) - 1.0));
    const double radius = side * (config.min_scale + (config.max_scale - config.min_scale) * uniform01(rng));
    const double hue = uniform01(rng);
    const double sat = 0.75 + 0.25 * uniform01(rng);
    const double val = 0.8 + 0.2 * uniform01(rng);
    double rgb[3];
    hsv_to_rgb(hue, sat, val, rgb);
    if (ch == 1) rgb[0] = val;

    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
            const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
            hits += inside(kind, (px - cx) / radius, (py - cy) / radius) ? 1 : 0;
          }
        }
        const double coverage = static_cast<double>(hits) / (kSuper * kSuper);
        for (std::size_t c = 0; c < ch; ++c) {
          double& pix = out.images[((i * s + y) * s + x) * ch + c];
          pix = coverage * rgb[c] + (1.0 - coverage) * config.background;
        }
      }
    }
  }
  return out;
}

Split split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (n < 2) throw ConfigError("split needs at least two rows");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Split split;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.held_out.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

namespace {

Json generator_json(const ShapeGeneratorConfig& c) {
  return {{"count", c.count},           {"classes", c.classes},     {"size", c.size},
          {"channels", c.channels},     {"center_jitter", c.center_jitter},
          {"min_scale", c.min_scale},   {"max_scale", c.max_scale}, {"background", c.background},
          {"seed", c.seed}};
}

Tensor labels_tensor(const std::vector<int>& labels) {
  std::vector<double> v(labels.begin(), labels.end());
  return Tensor({labels.size()}, std::move(v));
}

std::vector<int> labels_from(const Tensor& t) {
  std::vector<int> out;
  out.reserve(t.size());
  for (double v : t.values()) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const ShapeImageDataset& dataset) {
  if (dataset.labels.empty() || dataset.images.empty()) throw ConfigError("refusing to write an empty dataset");
  Container c;
  c.kind = "shape_dataset";
  c.meta["generator"] = generator_json(dataset.config);
  c.meta["kinds"] = Json::array();
  for (std::size_t k = 0; k < dataset.config.classes; ++k) c.meta["kinds"].push_back(to_string(static_cast<ShapeKind>(k)));
  c.arrays.push_back({"images", Dtype::f64, dataset.images});
  c.arrays.push_back({"labels", Dtype::i32, labels_tensor(dataset.labels)});
  write_container(path, c);
}

ShapeImageDataset read_dataset(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "shape_dataset") throw FormatError("'" + path.string() + "' is a " + c.kind + ", not a shape dataset");
  ShapeImageDataset out;
  out.images = c.array("images").values;
  out.labels = labels_from(c.array("labels").values);
  const Json& g = c.meta.at("generator");
  out.config.count = g.at("count");
  out.config.classes = g.at("classes");
  out.config.size = g.at("size");
  out.config.channels = g.at("channels");
  out.config.center_jitter = g.at("center_jitter");
  out.config.min_scale = g.at("min_scale");
  out.config.max_scale = g.at("max_scale");
  out.config.background = g.at("background");
  out.config.seed = g.at("seed");
  if (out.images.rank() != 4 || out.images.extent(0) != out.labels.size()) {
    throw FormatError("shape dataset arrays disagree on the sample count");
  }
  return out;
}

void write_points(const std::filesystem::path& path, const LabeledPoints& points, const MixtureSpec& spec) {
  if (points.labels.empty()) throw ConfigError("refusing to write an empty point set");
  Container c;
  c.kind = "point_dataset";
  Json comps = Json::array();
  for (const auto& comp : spec.components) {
    comps.push_back({{"weight", comp.weight}, {"mean", comp.mean}, {"var", comp.var}, {"class", comp.class_id}});
  }
  c.meta["mixture"] = comps;
  c.arrays.push_back({"points", Dtype::f64, points.points});
  c.arrays.push_back({"labels", Dtype::i32, labels_tensor(points.labels)});
  write_container(path, c);
}

LabeledPoints read_points(const std::filesystem::path& path, MixtureSpec* spec) {
  const Container c = read_container(path);
  if (c.kind != "point_dataset") throw FormatError("'" + path.string() + "' is a " + c.kind + ", not a point dataset");
  if (spec) {
    spec->components.clear();
    for (const auto& j : c.meta.at("mixture")) {
      spec->components.push_back({j.at("weight"), j.at("mean").get<std::vector<double>>(), j.at("var"), j.at("class")});
    }
  }
  return {c.array("points").values, labels_from(c.array("labels").values)};
}

}  // namespace svgl
