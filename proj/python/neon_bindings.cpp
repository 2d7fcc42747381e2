#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "neon/cli.hpp"
#include "neon/error.hpp"

namespace py = pybind11;
using namespace neon;

namespace {

py::dict record_dict(const RunRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["batch_index"] = r.batch_index;
  d["u"] = r.u;
  d["objective"] = r.objective;
  d["best_so_far"] = r.best_so_far;
  d["acquisition"] = r.acquisition;
  d["train_loss"] = r.train_loss;
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

py::dict log_dict(const RunLog& log) {
  py::dict d;
  d["problem"] = log.problem;
  d["seed"] = log.seed;
  py::list records;
  for (const auto& r : log.records) records.append(record_dict(r));
  d["records"] = records;
  d["best"] = log.records.empty() ? py::object(py::none()) : py::object(py::float_(log.best()));
  d["error"] = log.error ? py::object(py::str(*log.error)) : py::object(py::none());
  return d;
}

Problem load_problem(const std::string& id, const std::string& field_file, Index resolution) {
  RunConfig c = default_config(id);
  c.field_file = field_file;
  c.resolution = resolution;
  return make_problem(id, c.problem_options());
}

}  // namespace

PYBIND11_MODULE(_neon, m) {
  m.doc() = "Composite Bayesian optimisation with NEON surrogates";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<LookupError>(m, "LookupError", PyExc_KeyError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::enum_<Sense>(m, "Sense").value("MAXIMIZE", Sense::kMaximize).value("MINIMIZE", Sense::kMinimize);

  py::class_<Problem>(m, "Problem")
      .def_readonly("id", &Problem::id)
      .def_property_readonly("lower", [](const Problem& p) { return p.domain.lower; })
      .def_property_readonly("upper", [](const Problem& p) { return p.domain.upper; })
      .def_readonly("grid", &Problem::grid)
      .def_readonly("output_dim", &Problem::output_dim)
      .def_readonly("sense", &Problem::sense)
      .def_readonly("candidates", &Problem::candidates)
      .def("field", [](const Problem& p, const Vector& u) { return p.field(u); }, py::arg("u"))
      .def("evaluate", &Problem::evaluate, py::arg("u"))
      .def("__repr__", [](const Problem& p) { return "<Problem " + p.id + ">"; });

  m.def("problem_ids", &problem_ids);
  m.def("make_problem", &load_problem, py::arg("id"), py::arg("field_file") = "", py::arg("resolution") = 0);

  m.def("env_model_field", &env_model_field, py::arg("u"), py::arg("s"), py::arg("t"));
  m.def(
      "brusselator_solve",
      [](const Vector& params, Index resolution, double noise_amplitude) {
        BrusselatorSpec spec;
        spec.resolution = resolution;
        spec.noise_lattice = std::min<Index>(spec.noise_lattice, resolution);
        spec.noise_amplitude = noise_amplitude;
        spec.validate();
        return brusselator_solve(params, spec);
      },
      py::arg("params"), py::arg("resolution") = 64, py::arg("noise_amplitude") = 0.1);
  m.def(
      "weighted_variance", [](const Matrix& f, double wu, double wv) { return weighted_variance(f, wu, wv); },
      py::arg("field"), py::arg("weight_u") = 1.0, py::arg("weight_v") = 1.0);
  m.def(
      "visibility", [](const Matrix& f, const Matrix& grid) { return visibility(f, grid); }, py::arg("field"),
      py::arg("grid"));
  m.def(
      "cell_coverage_objective", [](const Matrix& f, const Matrix& grid) { return cell_coverage_objective(f, grid); },
      py::arg("field"), py::arg("grid"));

  m.def("ei_point", &ei_point, py::arg("v"), py::arg("incumbent"));
  m.def("lei_point", &lei_point, py::arg("v"), py::arg("incumbent"), py::arg("delta"));

  m.def(
      "initial_design",
      [](const Vector& lower, const Vector& upper, Index n0, std::uint64_t seed) {
        return initial_design(BoxDomain(lower, upper), n0, seed);
      },
      py::arg("lower"), py::arg("upper"), py::arg("n0"), py::arg("seed"));

  m.def("default_config", [](const std::string& id) { return to_ini(default_config(id)); }, py::arg("problem"),
        "Default INI configuration text for a problem.");
  m.def("normalize_config", [](const std::string& text) { return to_ini(parse_config(text)); }, py::arg("text"),
        "Parse INI text and serialise it back with every key spelled out.");

  m.def(
      "parameter_count",
      [](const std::string& text) {
        const RunConfig c = parse_config(text);
        const Problem p = make_problem(c.problem, c.problem_options());
        return NeonModel::create(c.model, p.domain.dim(), p.grid.cols(), p.output_dim, 0)
            .trainable_parameter_count();
      },
      py::arg("config"), "Trainable parameters of the configured NEON model.");

  m.def(
      "run_bo",
      [](const std::string& text, std::uint64_t seed) {
        const RunConfig c = parse_config(text);
        const Problem p = make_problem(c.problem, c.problem_options());
        RunLog log;
        {
          py::gil_scoped_release release;
          log = run_bo(p, c.settings(), seed);
        }
        return log_dict(log);
      },
      py::arg("config"), py::arg("seed"), "One BO run; q-LEI configs acquire q points per iteration.");

  m.def(
      "random_search",
      [](const std::string& id, Index evaluations, std::uint64_t seed, const std::string& field_file) {
        return log_dict(random_search(load_problem(id, field_file, 0), evaluations, seed));
      },
      py::arg("problem"), py::arg("evaluations"), py::arg("seed"), py::arg("field_file") = "");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"neon"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command-line front end; returns (exit code, stdout, stderr).");
}
