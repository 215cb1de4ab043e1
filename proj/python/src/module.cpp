#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cimil/dataset.hpp"
#include "cimil/distill.hpp"
#include "cimil/eval_metrics.hpp"
#include "cimil/memory_bank.hpp"
#include "cimil/pipeline.hpp"
#include "cimil/rff_decorr.hpp"
#include "cimil/tensor_file.hpp"

namespace py = pybind11;
using namespace cimil;

namespace {

// JSON crosses the boundary as text; the Python wrapper converts to dicts.
RunConfig config_from_text(const std::string& text) {
  return run_config_from_json(nlohmann::json::parse(text));
}

DecorrOptions decorr_options(int steps, double lr, const std::string& mode, bool symmetric) {
  DecorrOptions opts;
  opts.steps = steps;
  opts.lr = lr;
  opts.mode = parse_decorr_mode(mode);
  opts.inprod_symmetric = symmetric;
  return opts;
}

}  // namespace

PYBIND11_MODULE(_cimil, m) {
  m.doc() = "Bindings for the cimil core library.";

  py::register_exception<Error>(m, "CimilError", PyExc_ValueError);

  // Selection and distillation loss.
  m.def("select_top_k", &select_top_k, py::arg("probs"), py::arg("k"));
  m.def("select_bipolar", &select_bipolar, py::arg("probs"), py::arg("k"));
  m.def("distillation_loss", &distillation_loss, py::arg("top_probs"), py::arg("bag_label"));

  // Random Fourier features and decorrelation.
  py::class_<RffMap>(m, "RffMap")
      .def(py::init(&build_rff_map), py::arg("samples"), py::arg("seed"))
      .def_readonly("omega", &RffMap::omega)
      .def_readonly("phi", &RffMap::phi)
      .def("apply", &apply_rff, py::arg("features"));
  m.def("covariance_matrix", &covariance_matrix, py::arg("weighted"));
  m.def("inner_product_matrix", &inner_product_matrix, py::arg("features"), py::arg("weighted"));
  m.def(
      "decorrelation_loss",
      [](const Matrix& features, const Vector& weights, const std::string& mode, bool symmetric) {
        return decorrelation_loss(
            correlation_matrices(features, weights, parse_decorr_mode(mode), symmetric));
      },
      py::arg("features"), py::arg("weights"), py::arg("mode") = "cov",
      py::arg("inprod_symmetric") = false);
  m.def(
      "optimize_weights",
      [](const Matrix& features, std::optional<Vector> init, int steps, double lr,
         const std::string& mode, bool symmetric) {
        const WeightState start = init ? WeightState::from_weights(*init)
                                       : WeightState::uniform(static_cast<int>(features.rows()));
        const DecorrResult r =
            optimize_weights(features, start, decorr_options(steps, lr, mode, symmetric));
        py::dict out;
        out["weights"] = r.state.weights();
        out["initial_loss"] = r.initial_loss;
        out["final_loss"] = r.final_loss;
        out["rejected_steps"] = r.rejected_steps;
        out["constraint_violations"] = r.constraint_violations;
        return out;
      },
      py::arg("features"), py::arg("init") = std::nullopt, py::arg("steps") = 20,
      py::arg("lr") = 0.05, py::arg("mode") = "cov", py::arg("inprod_symmetric") = false);

  // Memory bank.
  py::class_<MemoryBank>(m, "MemoryBank")
      .def(py::init([](int capacity, int rows, int cols, const std::string& rule) {
             return MemoryBank(capacity, rows, cols, parse_bank_update_rule(rule));
           }),
           py::arg("capacity"), py::arg("rows"), py::arg("cols"), py::arg("update_rule") = "all")
      .def("update", &MemoryBank::update, py::arg("features"), py::arg("weights"),
           py::arg("drawn_index") = std::nullopt)
      .def("freeze", &MemoryBank::freeze)
      .def("alpha", &MemoryBank::alpha)
      .def("slot_features", &MemoryBank::slot_features, py::arg("index"))
      .def("slot_weights", &MemoryBank::slot_weights, py::arg("index"))
      .def_property_readonly("capacity", &MemoryBank::capacity)
      .def_property_readonly("fill_count", &MemoryBank::fill_count)
      .def_property_readonly("frozen", &MemoryBank::frozen);

  // Metrics.
  m.def("auc", &auc, py::arg("scores"), py::arg("labels"));
  m.def(
      "threshold_metrics",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
        const ThresholdMetrics t = threshold_metrics(scores, labels, threshold);
        py::dict out;
        out["acc"] = t.acc;
        out["recall"] = t.recall;
        out["precision"] = t.precision;
        return out;
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);

  // End-to-end runs. Configs and reports are JSON text.
  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("synthesize", [](const std::string& config, const std::filesystem::path& dir) {
    write_dataset(materialize_dataset(config_from_text(config)), dir);
  });
  m.def("train", [](const std::string& config) {
    RunConfig cfg = config_from_text(config);
    const Dataset data = materialize_dataset(cfg);
    cfg = resolve(cfg, data);
    const TrainResult result = train_full(cfg, data);
    return py::make_tuple(py::bytes(result.bundle.serialize()),
                          to_json(evaluate(result.bundle, data)).dump(),
                          to_json(cfg).dump());
  });
  m.def("evaluate", [](const py::bytes& bundle, const std::string& split) {
    const ModelBundle b = ModelBundle::from_tensor_file(TensorFile::deserialize(bundle));
    const Dataset data = materialize_dataset(b.config);
    return to_json(evaluate(b, data, parse_split(split))).dump();
  }, py::arg("bundle"), py::arg("split") = "test");
}
