#include "svgl/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "svgl/error.hpp"

namespace svgl {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
    case Dtype::i32: return "i32";
  }
  return "?";
}

Dtype dtype_from(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  if (s == "i32") return Dtype::i32;
  throw FormatError("unknown array dtype '" + s + "'");
}

std::size_t dtype_bytes(Dtype d) { return d == Dtype::f64 ? 8 : 4; }

}  // namespace

const NamedArray& Container::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("container of kind '" + kind + "' has no array '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
  return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
}

std::vector<unsigned char> serialize_container(const Container& container) {
  Json header;
  header["kind"] = container.kind;
  header["meta"] = container.meta;
  header["arrays"] = Json::array();
  for (const auto& a : container.arrays) {
    header["arrays"].push_back({{"name", a.name},
                                {"dtype", dtype_name(a.dtype)},
                                {"shape", a.values.shape()},
                                {"bytes", a.values.size() * dtype_bytes(a.dtype)}});
  }
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : container.arrays) {
    for (double v : a.values.values()) {
      switch (a.dtype) {
        case Dtype::f32: put_le<float>(out, static_cast<float>(v)); break;
        case Dtype::f64: put_le<double>(out, v); break;
        case Dtype::i32: put_le<std::int32_t>(out, static_cast<std::int32_t>(std::lround(v))); break;
      }
    }
  }
  return out;
}

Container parse_container(const std::vector<unsigned char>& bytes) {
  constexpr std::size_t fixed = 4 + 4 + 8;
  if (bytes.size() < fixed) throw FormatError("file too short for an SVGL header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("bad magic bytes (not an SVGL file)");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version > kFormatVersion || version == 0) {
    throw FormatError("unsupported SVGL format version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - fixed) throw FormatError("truncated SVGL header");
  Json header;
  try {
    header = Json::parse(bytes.begin() + fixed, bytes.begin() + static_cast<std::ptrdiff_t>(fixed + header_len));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("corrupt SVGL header: ") + e.what());
  }

  Container c;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.value("meta", Json::object());
    std::size_t offset = fixed + header_len;
    for (const auto& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.dtype = dtype_from(entry.at("dtype").get<std::string>());
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto nbytes = entry.at("bytes").get<std::size_t>();
      std::size_t count = 1;
      for (std::size_t e : shape) count *= e;
      if (count * dtype_bytes(a.dtype) != nbytes) throw FormatError("array '" + a.name + "' byte length mismatch");
      if (offset + nbytes > bytes.size()) throw FormatError("truncated payload in array '" + a.name + "'");
      std::vector<double> values(count);
      const unsigned char* p = bytes.data() + offset;
      for (std::size_t i = 0; i < count; ++i) {
        switch (a.dtype) {
          case Dtype::f32: values[i] = get_le<float>(p + 4 * i); break;
          case Dtype::f64: values[i] = get_le<double>(p + 8 * i); break;
          case Dtype::i32: values[i] = get_le<std::int32_t>(p + 4 * i); break;
        }
      }
      a.values = Tensor(shape, std::move(values));
      offset += nbytes;
      c.arrays.push_back(std::move(a));
    }
    if (offset != bytes.size()) throw FormatError("trailing bytes after SVGL payload");
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed SVGL header: ") + e.what());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file_atomic(path, serialize_container(container));
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_container(bytes);
}

namespace {

template <typename Bytes>
void write_atomic_impl(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  write_atomic_impl(path, contents);
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  write_atomic_impl(path, bytes);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& path, const Json& value) {
  write_file_atomic(path, value.dump(2) + "\n");
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.extent(2) != 3 && image.extent(2) != 1)) {
    throw ShapeError("write_pnm expects an H x W x {1,3} image");
  }
  const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
  std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : image.values()) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  write_file_atomic(path, out);
}

Tensor tile_images(const Tensor& images, std::size_t columns, double pad_value) {
  if (images.rank() != 4) throw ShapeError("tile_images expects n x H x W x C");
  const std::size_t n = images.extent(0), h = images.extent(1), w = images.extent(2), c = images.extent(3);
  columns = std::max<std::size_t>(1, std::min(columns, n));
  const std::size_t rows = (n + columns - 1) / columns;
  const std::size_t H = rows * (h + 1) + 1, W = columns * (w + 1) + 1;
  Tensor out({H, W, c}, pad_value);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r0 = 1 + (k / columns) * (h + 1), c0 = 1 + (k % columns) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[((r0 + y) * W + c0 + x) * c + ch] = images[((k * h + y) * w + x) * c + ch];
  }
  return out;
}

}  // namespace svgl
