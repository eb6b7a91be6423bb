// Python bindings: scenario drivers plus a few state and entropy helpers.
#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>

#include "mqc/linalg.hpp"
#include "mqc/scenario.hpp"

namespace py = pybind11;
using namespace mqc;

namespace {

ScenarioConfig config_from(const std::string& text, const std::string& base_dir) {
  return parse_config(nlohmann::json::parse(text), base_dir);
}

py::array_t<double> to_array(const ScalarField& f) {
  const PhaseGrid& g = f.grid();
  py::array_t<double> out({g.nq(), g.np()});
  auto a = out.mutable_unchecked<2>();
  for (int i = 0; i < g.nq(); ++i)
    for (int j = 0; j < g.np(); ++j) a(i, j) = f(i, j);
  return out;
}

SmallMatrix to_matrix(const py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>& m) {
  if (m.ndim() != 2 || m.shape(0) != m.shape(1) || m.shape(0) < 1 || m.shape(0) > kMaxDim)
    throw InvalidInput("expected a square matrix of size 1.." + std::to_string(kMaxDim));
  const auto a = m.unchecked<2>();
  SmallMatrix out(m.shape(0), m.shape(1));
  for (py::ssize_t i = 0; i < m.shape(0); ++i)
    for (py::ssize_t j = 0; j < m.shape(1); ++j) out(i, j) = a(i, j);
  return out;
}

ScalarField density_of_state(const ModelState& s) {
  return std::visit(
      [](const auto& st) -> ScalarField {
        using S = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<S, HybridDensity>)
          return classical_density(st);
        else
          return st.D;
      },
      s);
}

py::dict series_dict(const DiagnosticSeries& series) {
  py::dict cols;
  const auto& names = csv_columns();
  for (std::size_t c = 0; c < names.size(); ++c) {
    py::list values;
    for (const auto& row : series.rows) {
      const auto v = column_value(row, c);
      values.append(v ? py::object(py::float_(*v)) : py::object(py::none()));
    }
    cols[py::str(names[c])] = values;
  }
  return cols;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_mqc, m) {
  m.doc() = "Mixed quantum-classical phase-space dynamics";

  // translators run newest first, so the base class is registered before its subclasses
  const auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalAbort>(m, "NumericalAbort", base.ptr());

  m.def(
      "simulate",
      [](const std::string& config, const std::string& base_dir, const std::string& out_dir) {
        const ScenarioConfig cfg = config_from(config, base_dir);
        SimulateOutcome o;
        {
          py::gil_scoped_release release;
          o = run_simulate(cfg, out_dir);
        }
        py::dict r;
        r["exit_code"] = o.exit_code;
        r["aborted"] = o.run.aborted;
        r["abort_reason"] = o.run.abort_reason;
        r["dt"] = o.stepper.dt;
        r["steps"] = o.stepper.steps;
        r["steps_taken"] = o.run.steps_taken;
        r["max_cfl"] = o.run.max_cfl;
        r["warnings"] = o.run.warnings;
        r["diagnostics"] = series_dict(o.run.series);
        r["final_density"] = to_array(density_of_state(o.run.state));
        py::list files;
        for (const auto& f : o.files) files.append(f.string());
        r["files"] = files;
        return r;
      },
      py::arg("config"), py::arg("base_dir") = "", py::arg("out_dir") = "",
      "Runs a scenario given as JSON text. Returns the diagnostics table and run metadata.");

  m.def(
      "equilibrium",
      [](const std::string& config, const std::string& base_dir, const std::string& out_dir) {
        const ScenarioConfig cfg = config_from(config, base_dir);
        const EquilibriumOutcome o = run_equilibrium(cfg, out_dir);
        py::dict r = json_to_py(o.metrics);
        r["density"] = to_array(density_of_state(o.result.state));
        return r;
      },
      py::arg("config"), py::arg("base_dir") = "", py::arg("out_dir") = "");

  m.def(
      "casimir_check",
      [](const std::string& config, const std::string& base_dir, const std::string& out_dir) {
        return json_to_py(run_casimir_check(config_from(config, base_dir), out_dir));
      },
      py::arg("config"), py::arg("base_dir") = "", py::arg("out_dir") = "");

  m.def(
      "read_snapshot_density",
      [](const std::filesystem::path& path) { return to_array(density_of_state(read_snapshot_file(path))); },
      py::arg("path"), "Classical density D of a snapshot file, indexed [q, p].");

  m.def(
      "von_neumann_entropy",
      [](const py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>& rho) {
        return von_neumann_entropy(to_matrix(rho));
      },
      py::arg("rho"));
  m.def(
      "purity",
      [](const py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>& rho) {
        return purity(to_matrix(rho));
      },
      py::arg("rho"));
  m.def("csv_columns", &csv_columns);
}
