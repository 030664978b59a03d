#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "svgl/datagen.hpp"
#include "svgl/io.hpp"
#include "svgl/metrics.hpp"
#include "svgl/oracle.hpp"
#include "svgl/pipeline.hpp"
#include "svgl/sampler.hpp"

namespace py = pybind11;
using namespace svgl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_svgl, m) {
  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  py::class_<MixtureSpec>(m, "MixtureSpec")
      .def_property_readonly("dim", &MixtureSpec::dim)
      .def_property_readonly("num_classes", &MixtureSpec::num_classes)
      .def("class_conditional", &MixtureSpec::class_conditional)
      .def("class_centroid", &MixtureSpec::class_centroid)
      .def("pooled_mean", &MixtureSpec::pooled_mean)
      .def("__len__", [](const MixtureSpec& s) { return s.components.size(); });

  m.def(
      "make_mixture",
      [](const std::string& preset, std::size_t dim, std::uint64_t seed) {
        return make_mixture(preset_from_string(preset), dim, seed);
      },
      py::arg("preset"), py::arg("dim") = 2, py::arg("seed") = 0);
  m.def(
      "sample_mixture",
      [](const MixtureSpec& spec, std::size_t n, std::uint64_t seed) {
        const LabeledPoints p = sample_mixture(spec, n, seed);
        return py::make_tuple(to_array(p.points), p.labels);
      },
      py::arg("spec"), py::arg("n"), py::arg("seed"));
  m.def(
      "gen_shapes",
      [](std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed) {
        const ShapeImageDataset ds = gen_shapes(n, classes, size, seed);
        return py::make_tuple(to_array(ds.images), ds.labels);
      },
      py::arg("n"), py::arg("classes") = 4, py::arg("size") = 16, py::arg("seed") = 0);

  m.def(
      "oracle_velocity",
      [](const MixtureSpec& spec, const Array& x, double t) { return to_array(oracle_velocity(spec, to_tensor(x), t)); },
      py::arg("spec"), py::arg("x"), py::arg("t"));
  m.def(
      "mc_velocity",
      [](const MixtureSpec& spec, const Array& x, double t, std::size_t n, std::uint64_t seed) {
        return to_array(mc_velocity(spec, to_tensor(x), t, n, seed));
      },
      py::arg("spec"), py::arg("x"), py::arg("t"), py::arg("n"), py::arg("seed"));
  m.def(
      "oracle_sample",
      [](const MixtureSpec& spec, const Array& noise, std::size_t steps) {
        return to_array(oracle_sample(spec, to_tensor(noise), steps));
      },
      py::arg("spec"), py::arg("noise"), py::arg("steps"));

  m.def(
      "sliced_wasserstein",
      [](const Array& a, const Array& b, std::size_t n_proj, std::uint64_t seed) {
        return sliced_wasserstein(to_tensor(a), to_tensor(b), n_proj, seed);
      },
      py::arg("a"), py::arg("b"), py::arg("n_proj") = 64, py::arg("seed") = 0);
  m.def(
      "mmd", [](const Array& a, const Array& b, double bw) { return mmd(to_tensor(a), to_tensor(b), bw); },
      py::arg("a"), py::arg("b"), py::arg("bandwidth"));
  m.def(
      "dispersion_score",
      [](const Array& f, const std::vector<int>& labels) { return dispersion_score(to_tensor(f), labels); },
      py::arg("features"), py::arg("labels"));
  m.def(
      "psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "linear_probe",
      [](const Array& f, const std::vector<int>& labels, std::uint64_t split_seed, std::size_t epochs) {
        return linear_probe(to_tensor(f), labels, split_seed, epochs);
      },
      py::arg("features"), py::arg("labels"), py::arg("split_seed") = 0, py::arg("epochs") = 100);

  m.def("time_grid", &time_grid, py::arg("steps"), py::arg("shift") = 1.0);
  m.def(
      "interpolate_slerp",
      [](const Array& a, const Array& b, double lambda) {
        return to_array(interpolate_slerp(to_tensor(a), to_tensor(b), lambda));
      },
      py::arg("x0"), py::arg("x1"), py::arg("lam"));

  m.def("command_names", &command_names);
  m.def(
      "run_command",
      [](const std::string& command, const std::string& config_json) {
        const Json resolved = resolve_config(command, Json::parse(config_json), {});
        return run_command(command, resolved).dump();
      },
      py::arg("command"), py::arg("config_json") = "{}");
}
