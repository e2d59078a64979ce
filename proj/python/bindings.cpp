#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cvpe/cli.hpp"
#include "cvpe/eval.hpp"

namespace py = pybind11;
using namespace cvpe;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict gradcheck(std::uint64_t seed, double tolerance, std::optional<std::string> inject_fault) {
    cli::GradCheckRequest req;
    req.seed = seed;
    req.tolerance = tolerance;
    req.inject_fault = std::move(inject_fault);
    auto report = cli::run_gradcheck(req);
    py::list entries;
    for (const auto& e : report.entries) {
        py::dict d;
        d["name"] = e.name;
        d["coordinates"] = e.coordinates;
        d["max_rel_error"] = e.max_rel_error;
        d["passed"] = e.passed;
        entries.append(d);
    }
    py::dict out;
    out["passed"] = report.passed;
    out["max_rel_error"] = report.max_rel_error;
    out["tolerance"] = report.tolerance;
    out["entries"] = entries;
    return out;
}

py::list experiment(const std::string& config_json) {
    auto cfg = config::parse(config_json);
    eval::ExperimentReport report;
    {
        py::gil_scoped_release release;
        report = eval::run_experiment(cfg);
    }
    py::list rows;
    for (const auto& c : report.cells) {
        py::dict d;
        d["dataset"] = c.dataset;
        d["variant"] = model::to_string(c.variant);
        d["horizon"] = c.horizon;
        d["seed"] = c.seed;
        d["ok"] = c.ok;
        d["error"] = c.error;
        d["mse"] = c.metrics.mse;
        d["mae"] = c.metrics.mae;
        d["window_hash"] = c.window_hash;
        d["epochs_run"] = c.epochs_run;
        rows.append(d);
    }
    return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "CVPE forecaster core: config handling, models, gradient check and experiments.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("normalize_config", [](const std::string& text) { return config::to_json(config::parse(text)); },
          py::arg("config_json"), "Parse and validate a run config, returning its canonical JSON.");
    m.def("patch_count", [](std::size_t patch_len, std::size_t stride, std::size_t context) {
        preprocess::PatchConfig cfg{patch_len, stride, context, 1};
        cfg.validate();
        return cfg.patch_count();
    });
    m.def("score_entries", &block::expected_score_entries, py::arg("variates"), py::arg("patches"), py::arg("routers"),
          py::arg("heads"));
    m.def("gradcheck", &gradcheck, py::arg("seed") = 0, py::arg("tolerance") = 1e-4,
          py::arg("inject_fault") = std::nullopt);
    m.def("experiment", &experiment, py::arg("config_json"), "Run the experiment grid and return one dict per cell.");

    py::class_<model::Model>(m, "Model")
        .def_static(
            "create",
            [](const std::string& model_json, std::uint64_t seed) {
                return model::Model::create(model::model_config_from_json(model_json), seed);
            },
            py::arg("model_json"), py::arg("seed") = 0)
        .def_static("load", [](const std::string& path) { return model::Model::load(path); })
        .def("save", [](const model::Model& self, const std::string& path) { self.save(path); })
        .def("forecast", [](const model::Model& self, const Array& window) { return to_array(self.forecast(to_tensor(window))); })
        .def_property_readonly("config_json", [](const model::Model& self) { return model::model_config_to_json(self.config()); })
        .def_property_readonly("parameter_count", [](model::Model& self) { return self.params().scalar_count(); });
}
