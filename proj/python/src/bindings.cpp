#include "dgform/error.hpp"
#include "dgform/io.hpp"
#include "dgform/paas.hpp"
#include "dgform/service.hpp"
#include "dgform/sim.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
using namespace dgform;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python wrapper decodes it.
std::vector<Point3> points(const std::vector<std::array<double, 3>>& in) {
  std::vector<Point3> out;
  out.reserve(in.size());
  for (const auto& p : in) out.emplace_back(p[0], p[1], p[2]);
  return out;
}

std::string paas(const std::string& shape_json, const std::vector<std::array<double, 3>>& positions,
                 const std::array<double, 3>& center, double radius, double agent_radius, double margin,
                 std::uint64_t seed) {
  const FormationShape shape = shape_from_json(parse_json(shape_json, "shape"));
  PaasConfig cfg;
  cfg.agent_radius = agent_radius;
  cfg.margin = margin;
  cfg.seed = seed;
  const auto pos = points(positions);
  const DvsState dvs{Point3(center[0], center[1], center[2]), radius, 1.0};
  return plan_to_json(run_paas(shape, pos, dvs, cfg)).dump();
}

std::string run_scenario(const std::string& path, std::uint64_t seed, const std::string& mode, double duration) {
  Scenario sc = load_scenario(path);
  sc.config.seed = seed;
  if (mode == "rigid-vrb") {
    sc.config.mode = GuidanceMode::kRigid;
  } else if (mode == "full") {
    sc.config.mode = GuidanceMode::kFull;
  } else if (!mode.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "mode must be full or rigid-vrb");
  }
  if (duration > 0.0) sc.config.duration = duration;
  RunResult r;
  {
    py::gil_scoped_release release;
    r = run(sc);
  }
  return summary_to_json(sc, r).dump();
}

py::tuple hungarian(const Eigen::MatrixXd& cost) {
  const Assignment a = hungarian_assign(cost);
  return py::make_tuple(a.target_of, a.total_cost);
}

double formation_error_py(const std::vector<std::array<double, 3>>& positions,
                          const std::vector<std::array<double, 3>>& desired) {
  return formation_error(points(positions), points(desired));
}

py::bytes encode(const std::string& message_json) { return py::bytes(encode_frame(parse_json(message_json))); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the dgform formation planner";
  py::register_exception<Error>(m, "DgformError", PyExc_ValueError);

  m.def("run_paas", &paas, py::arg("shape_json"), py::arg("positions"), py::arg("center"), py::arg("radius"),
        py::arg("agent_radius") = 0.15, py::arg("margin") = 1.5, py::arg("seed") = 0);
  m.def("run_scenario", &run_scenario, py::arg("path"), py::arg("seed") = 0, py::arg("mode") = "",
        py::arg("duration") = 0.0);
  m.def("hungarian", &hungarian, py::arg("cost"));
  m.def("formation_error", &formation_error_py, py::arg("positions"), py::arg("desired"));
  m.def("encode_frame", &encode, py::arg("message_json"));
  m.attr("PROTOCOL_VERSION") = kProtocolVersion;
}
