#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cecil/baselines.hpp"
#include "cecil/diagnostics.hpp"
#include "cecil/errors.hpp"
#include "cecil/harness.hpp"

namespace py = pybind11;
using namespace cecil;
using namespace cecil::harness;

namespace {

// Keys are "section.key"; values are converted with str().
IniData to_ini(const py::dict& settings) {
  IniData ini;
  for (const auto& [k, v] : settings) {
    const auto key = py::str(k).cast<std::string>();
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ConfigError("setting '" + key + "' must be written section.key");
    std::string value = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      value.clear();
      for (const auto& item : v) value += (value.empty() ? "" : ",") + py::str(item).cast<std::string>();
    }
    ini[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return ini;
}

ExperimentConfig make_config(const std::optional<std::filesystem::path>& path, const py::dict& settings) {
  IniData ini = path ? read_ini(*path) : IniData{};
  for (const auto& [section, keys] : to_ini(settings)) {
    for (const auto& [k, v] : keys) ini[section][k] = v;
  }
  return ExperimentConfig::from_ini(ini);
}

py::dict row_dict(const ResultRow& r) {
  py::dict d;
  d["scheme"] = r.scheme;
  d["n"] = r.n;
  d["uplink"] = r.uplink;
  d["downlink"] = r.downlink;
  d["channel"] = r.channel;
  d["mean_utility"] = r.mean_utility;
  d["std_error"] = r.std_error;
  d["runtime_s"] = r.runtime_s;
  d["seed"] = r.seed;
  return d;
}

// A scheme built for one sweep point of a config.
class Model {
 public:
  Model(ExperimentConfig cfg, const std::string& scheme, int point)
      : cfg_(std::move(cfg)) {
    const auto points = sweep_points(cfg_);
    if (point < 0 || point >= static_cast<int>(points.size())) throw ConfigError("sweep point out of range");
    inst_ = build_scheme(cfg_, parse_scheme(scheme), points[static_cast<std::size_t>(point)]);
  }

  py::dict prepare() {
    const TrainingCurve c = prepare_scheme(cfg_, inst_);
    py::dict d;
    d["validation"] = c.validation;
    d["best_epoch"] = c.best_epoch;
    d["seconds"] = c.seconds;
    return d;
  }

  Matrix powers(const Matrix& gains, std::uint64_t seed) {
    Rng rng(seed);
    return scheme_powers(cfg_, inst_, gains, rng);
  }

  std::pair<double, double> evaluate(const Matrix& gains) {
    const EvalResult r = evaluate_scheme(cfg_, inst_, gains);
    return {r.mean, r.std_error};
  }

  [[nodiscard]] const std::string& label() const { return inst_.label; }

 private:
  ExperimentConfig cfg_;
  SchemeInstance inst_;
};

}  // namespace

PYBIND11_MODULE(_cecil, m) {
  m.doc() = "Cooperative edge inference for fronthaul-limited F-RAN power control";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "sample_gains",
      [](int count, int n, std::uint64_t seed) {
        Rng rng(seed);
        return env::sample_gain_matrix(count, n, rng);
      },
      py::arg("count"), py::arg("n"), py::arg("seed") = 1, "(count x n^2) Exp(1) gains, column j*n+i holds a(j, i)");

  m.def(
      "utility",
      [](const Matrix& gains, const Matrix& powers, const std::string& kind) {
        return env::batch_utility(env::UtilityKind::parse(kind), gains, powers);
      },
      py::arg("gains"), py::arg("powers"), py::arg("kind") = "srmax", "per-sample sum utility");

  m.def(
      "pgd",
      [](const Matrix& gains, const std::string& kind, bool multi_start, int random_starts) {
        PgdConfig cfg;
        cfg.multi_start = multi_start;
        cfg.random_starts = random_starts;
        return pgd_batch(gains, env::UtilityKind::parse(kind), cfg);
      },
      py::arg("gains"), py::arg("kind") = "srmax", py::arg("multi_start") = false, py::arg("random_starts") = 1);

  m.def(
      "quantizer_selftest",
      [](std::vector<int> levels, int grid, int draws, std::uint64_t seed) {
        return diagnostics::quantizer_selftest(levels, grid, draws, seed).passed();
      },
      py::arg("levels") = std::vector<int>{2, 4, 8, 16}, py::arg("grid") = 50, py::arg("draws") = 100000,
      py::arg("seed") = 1);

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::map<std::string, double> out;
        for (const auto& c : diagnostics::gradcheck_suite(seed)) out[c.name] = c.result.max_relative_error;
        return out;
      },
      py::arg("seed") = 1, "max relative finite-difference error per layer and pipeline");

  m.def(
      "run_experiment",
      [](std::optional<std::filesystem::path> config, const py::dict& settings) {
        const ExperimentConfig cfg = make_config(config, settings);
        std::vector<ResultRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_experiment(cfg);
        }
        py::list out;
        for (const auto& r : rows) out.append(row_dict(r));
        return out;
      },
      py::arg("config") = py::none(), py::arg("settings") = py::dict(),
      "train or load every scheme at every sweep point and evaluate it; settings map 'section.key' to values");

  py::class_<Model>(m, "Model")
      .def(py::init([](std::optional<std::filesystem::path> config, const std::string& scheme, int point,
                       const py::dict& settings) { return Model(make_config(config, settings), scheme, point); }),
           py::arg("config") = py::none(), py::arg("scheme") = "cecil-noma", py::arg("point") = 0,
           py::arg("settings") = py::dict())
      .def("prepare", &Model::prepare, "train, or load from the checkpoint directory")
      .def("powers", &Model::powers, py::arg("gains"), py::arg("seed") = 1)
      .def("evaluate", &Model::evaluate, py::arg("gains"), "(mean, standard error) of the utility")
      .def_property_readonly("label", &Model::label);
}
