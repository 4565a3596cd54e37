#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lidar_sim/cli.hpp"
#include "lidar_sim/conv_net.hpp"
#include "lidar_sim/error.hpp"
#include "lidar_sim/eval.hpp"
#include "lidar_sim/io.hpp"
#include "lidar_sim/pgm.hpp"
#include "lidar_sim/service.hpp"

namespace py = pybind11;
using namespace lidar_sim;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const PolarGridMap& m) {
  Array a({m.channels, m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

Array to_array(const Tensor& t) {
  Array a({t.c, t.h, t.w});
  std::copy(t.v.begin(), t.v.end(), a.mutable_data());
  return a;
}

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected a (channels, rows, cols) array");
  Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.v.begin());
  return t;
}

std::vector<ScanFrame> scan_frames(const std::string& csv) {
  std::istringstream is(csv);
  return read_scan_csv(is);
}

// Keeps the model alive next to the selection config.
struct Model {
  SensorModel model;
  SelectionConfig config;
  std::string handle(const std::string& line) const { return handle_request_line(line, model, config); }
};

}  // namespace

PYBIND11_MODULE(_lidar_sim, m) {
  m.doc() = "LiDAR EPW sensor-model core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  py::class_<SensorSpec>(m, "SensorSpec")
      .def(py::init<>())
      .def_static("full", &SensorSpec::full)
      .def_static("desk", &SensorSpec::desk)
      .def_static("from_json", &sensor_spec_from_json)
      .def_readwrite("n_layers", &SensorSpec::n_layers)
      .def_readwrite("h_res", &SensorSpec::h_res)
      .def_readwrite("max_range", &SensorSpec::max_range)
      .def("rows", &SensorSpec::rows)
      .def("cols", &SensorSpec::cols)
      .def("to_json", &sensor_spec_to_json)
      .def("angle_to_cell",
           [](const SensorSpec& s, double az, double alt) {
             const auto c = angle_to_cell(s, az, alt);
             return py::make_tuple(c.row, c.col);
           })
      .def("cell_to_angle", [](const SensorSpec& s, int r, int c) {
        const auto a = cell_to_angle(s, r, c);
        return py::make_tuple(a.azimuth, a.altitude);
      });

  m.def(
      "reference_epw",
      [](int cls, double d, double inc, double refl) { return reference_epw(class_from_code(cls), d, inc, refl); },
      py::arg("cls"), py::arg("distance"), py::arg("incidence_cos"), py::arg("reflectivity"));

  m.def(
      "encode_scan_csv",
      [](const std::string& csv, const SensorSpec& spec, int echo) {
        py::list out;
        for (const auto& f : scan_frames(csv)) out.append(py::make_tuple(to_array(encode(f, spec, echo)),
                                                                          to_array(encode_epw(f, spec, echo))));
        return out;
      },
      "Per frame: ((distance, class), epw) maps of one echo.");

  m.def("evaluate_csv", [](const std::string& ref, const std::string& pred, const SensorSpec& spec) {
    return report_to_json(full_report(scan_frames(ref), scan_frames(pred), {}, spec));
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int rc = run(args, out, err);
    return py::make_tuple(rc, out.str(), err.str());
  });

  py::class_<EpwNetwork>(m, "Network")
      .def(py::init([](const std::string& variant, int base, std::uint64_t seed) {
             return build_network(parse_variant(variant), base, seed);
           }),
           py::arg("variant") = "unet", py::arg("base_channels") = 16, py::arg("seed") = 0)
      .def_static("load", &load_checkpoint)
      .def("save", [](const EpwNetwork& n, const std::string& path) { save_checkpoint(path, n); })
      .def_property_readonly("variant", [](const EpwNetwork& n) { return std::string(variant_name(n.variant)); })
      .def_property_readonly("parameter_count", &EpwNetwork::parameter_count)
      .def("forward", [](const EpwNetwork& n, const Array& x) { return to_array(forward(n, to_tensor(x))); })
      .def("loss", [](const EpwNetwork& n, const Array& pred, const Array& target, double lambda) {
        return loss(to_tensor(pred), to_tensor(target), n, lambda);
      });

  py::class_<Model>(m, "SensorModel")
      .def(py::init([](const std::string& dir, const std::string& backend, const std::string& mode, std::uint64_t seed,
                       std::optional<std::string> variant) {
             Model md;
             const auto spec = resolve_spec("", dir);
             std::optional<Variant> v;
             if (variant) v = parse_variant(*variant);
             md.model = load_sensor_model(dir, spec, backend == "net" ? Backend::Net : Backend::Lut, v);
             md.config.mode = mode == "sample" ? SelectionMode::Sample : SelectionMode::Argmax;
             md.config.seed = seed;
             return md;
           }),
           py::arg("model_dir"), py::arg("backend") = "lut", py::arg("mode") = "argmax", py::arg("seed") = 0,
           py::arg("variant") = py::none())
      .def("handle", &Model::handle, "One wire request line in, one response line out.");
}
