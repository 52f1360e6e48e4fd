// Python bindings for the main lattice operations.

#include "latro/run.hpp"

#include <pybind11/eigen.h>
#include <pybind11/iostream.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>

namespace py = pybind11;
using namespace latro;

namespace {

RunConfig config_from_string(const std::string& text) { return config_from_table(parse_config_text(text)); }

py::dict greedy(const MatrixXd& T, double epsilon) {
  ReducedBasis b = greedy_select(T, epsilon);
  compute_alpha(b, T);
  py::dict d;
  d["principal"] = b.principal;
  d["Z"] = b.Z;
  d["beta"] = b.beta;
  d["alpha"] = b.alpha;
  d["history"] = b.history;
  d["certificate"] = b.certified_residual();
  return d;
}

py::dict solve(const std::string& text, const std::string& path) {
  RunConfig cfg = config_from_string(text);
  if (path == "rb") cfg.path = SolverPath::Rb;
  else if (path == "standard") cfg.path = SolverPath::Standard;
  else if (!path.empty()) throw ConfigError("path must be 'standard' or 'rb'");
  const LatticeModel m = build_model(cfg);
  NewtonResult res;
  {
    py::gil_scoped_release release;
    res = newton_solve(m, cfg.material(), cfg.program(), cfg.newton, cfg.path, cfg.rb,
                       default_probes(cfg.bc, m.dim));
  }
  py::dict d;
  d["u"] = res.u;
  d["iterations"] = res.trace.total_iterations();
  d["dofs"] = m.num_dofs();
  d["cells"] = m.num_cells();
  d["report"] = report_json(cfg, m, res, "converged", "").dump();
  d["trace"] = trace_json(res.trace).dump();
  return d;
}

}  // namespace

PYBIND11_MODULE(_latro, mod) {
  mod.doc() = "Lattice hyperelasticity with reduced-basis local operators";

  static py::exception<Error> base(mod, "LatroError");
  py::register_exception<ConfigError>(mod, "ConfigError", base.ptr());
  py::register_exception<GeometryError>(mod, "GeometryError", base.ptr());
  py::register_exception<NonConvergenceError>(mod, "NonConvergenceError", base.ptr());
  py::register_exception<DomainError>(mod, "DomainError", base.ptr());

  py::class_<MaterialParams>(mod, "Material")
      .def_static("from_young", &MaterialParams::from_young, py::arg("E"), py::arg("nu"))
      .def_readonly("mu", &MaterialParams::mu)
      .def_readonly("lam", &MaterialParams::lambda);

  mod.def(
      "cauchy_stress", [](const MatrixXd& F, const MaterialParams& m) {
        if (F.rows() != F.cols() || F.rows() < 2 || F.rows() > 3) throw DomainError("F must be 2x2 or 3x3");
        return MatrixXd(cauchy_stress(Mat(F), m));
      },
      py::arg("F"), py::arg("material"));
  mod.def("greedy_select", &greedy, py::arg("T"), py::arg("epsilon"),
          "Principal columns of a snapshot matrix, with basis, coefficients and residual history.");
  mod.def(
      "model_size",
      [](const std::string& text) {
        const LatticeModel m = build_model(config_from_string(text));
        return py::make_tuple(m.num_cells(), m.num_dofs(), m.ref.n_ref);
      },
      py::arg("config_text"), "(cells, dofs, functions per cell) of a config.");
  mod.def("solve", &solve, py::arg("config_text"), py::arg("path") = "",
          "Run the Newton solve of a config; returns u, iteration count and JSON report/trace.");
  mod.def(
      "run",
      [](const std::string& config, const std::string& out_dir) {
        py::scoped_ostream_redirect o;
        return run_command(config, out_dir, 0, std::cout, std::cerr);
      },
      py::arg("config_path"), py::arg("out_dir") = "", "CLI `run`; returns the exit code.");
}
