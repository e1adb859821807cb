#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "epilnet/alert.hpp"
#include "epilnet/checkpoint.hpp"
#include "epilnet/data.hpp"
#include "epilnet/loadtest.hpp"
#include "epilnet/plot.hpp"
#include "epilnet/synthetic.hpp"
#include "epilnet/trainer.hpp"

namespace py = pybind11;
using namespace epilnet;

namespace {

using Model = EpilNet<float>;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> as_window(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D window");
  return {a.data(), a.data() + a.size()};
}

py::array_t<float> logits(const Model& model, const Array& batch) {
  if (batch.ndim() != 2) throw py::value_error("expected a (batch, length) array");
  const auto b = static_cast<std::size_t>(batch.shape(0)), l = static_cast<std::size_t>(batch.shape(1));
  SignalTensor<float> x(Shape{b, 1, l});
  for (std::size_t i = 0; i < b * l; ++i) x.data()[i] = static_cast<float>(batch.data()[i]);
  SignalTensor<float> y;
  {
    py::gil_scoped_release release;
    y = forward(model, x);
  }
  py::array_t<float> out({b, y.channels()});
  std::copy(y.data(), y.data() + b * y.channels(), out.mutable_data());
  return out;
}

py::dict prediction_dict(const Prediction& p, const std::vector<std::string>& names) {
  py::dict d;
  d["label_index"] = p.label_index;
  if (!names.empty()) d["label"] = names.at(p.label_index);
  d["probabilities"] = p.probabilities;
  return d;
}

py::dict row_dict(const LoadRow& r) {
  py::dict d;
  d["label"] = r.label;
  d["samples"] = r.samples;
  d["completed"] = r.completed;
  d["failed"] = r.failed;
  d["average_ms"] = r.average_ms;
  d["min_ms"] = r.min_ms;
  d["max_ms"] = r.max_ms;
  d["std_ms"] = r.std_ms;
  d["p99_ms"] = r.p99_ms;
  d["span_s"] = r.span_s;
  d["throughput_per_sec"] = r.throughput_per_sec;
  return d;
}

}  // namespace

PYBIND11_MODULE(_epilnet, m) {
  m.doc() = "EpilNet: 1-D ResNet EEG window classifier (C++ core)";
  m.attr("__version__") = "1.0.0";
  m.attr("WINDOW_LENGTH") = kWindowLength;

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ScriptError>(m, "ScriptError", PyExc_ValueError);

  py::enum_<GroupMode>(m, "GroupMode").value("three_class", GroupMode::three_class).value("five_class", GroupMode::five_class);
  py::enum_<Split>(m, "Split")
      .value("train", Split::train)
      .value("val", Split::val)
      .value("test", Split::test)
      .value("unassigned", Split::unassigned);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::size_t class_count, double width, std::uint64_t seed) {
             return ModelConfig{class_count, width, seed};
           }),
           py::arg("class_count") = 5, py::arg("width_multiplier") = 1.0, py::arg("seed") = 42)
      .def_readwrite("class_count", &ModelConfig::class_count)
      .def_readwrite("width_multiplier", &ModelConfig::width_multiplier)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property_readonly("stage_widths", &ModelConfig::stage_widths);

  py::class_<NormStats>(m, "NormStats")
      .def(py::init([](double mean, double std) { return NormStats{mean, std}; }), py::arg("mean") = 0.0, py::arg("std") = 1.0)
      .def_readwrite("mean", &NormStats::mean)
      .def_readwrite("std", &NormStats::std);

  py::class_<Model>(m, "Model")
      .def_static("build", &Model::build, py::arg("config") = ModelConfig{})
      .def_property_readonly("config", &Model::config)
      .def("trainable_count", &Model::trainable_count)
      .def("manifest", [](const Model& model) {
        py::list out;
        for (const auto& e : model.manifest())
          out.append(py::dict(py::arg("name") = e.name, py::arg("shape") = e.shape, py::arg("offset") = e.offset,
                              py::arg("trainable") = e.trainable));
        return out;
      })
      .def("temporal_trace",
           [](const Model& model, std::size_t length) {
             ForwardTrace trace;
             forward(model, SignalTensor<float>(Shape{1, 1, length}), &trace);
             return trace.lengths;
           },
           py::arg("length") = kWindowLength)
      .def("logits", &logits, py::arg("batch"), "Eval-mode logits for a (batch, length) array of normalized windows")
      .def("predict",
           [](const Model& model, const Array& window, const NormStats& norm) {
             return prediction_dict(predict(model, as_window(window), norm), {});
           },
           py::arg("window"), py::arg("norm") = NormStats{})
      .def("digest", [](const Model& model) { return model_digest(model); });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("model", &Checkpoint::model)
      .def_readonly("norm", &Checkpoint::norm)
      .def_readonly("digest", &Checkpoint::digest)
      .def_property_readonly("class_names", [](const Checkpoint& c) { return c.metadata.class_names; })
      .def_property_readonly("group_mode", [](const Checkpoint& c) { return c.metadata.group_mode; })
      .def_property_readonly("best_epoch", [](const Checkpoint& c) { return c.metadata.best_epoch; })
      .def_property_readonly("val_accuracy", [](const Checkpoint& c) { return c.metadata.val_accuracy; })
      .def("predict", [](const Checkpoint& c, const Array& window) {
        return prediction_dict(predict(c.model, as_window(window), c.norm), c.metadata.class_names);
      });
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));

  py::class_<EegDataset>(m, "Dataset")
      .def("__len__", [](const EegDataset& d) { return d.records.size(); })
      .def_readonly("has_id_column", &EegDataset::has_id_column)
      .def_property_readonly("ids", [](const EegDataset& d) {
        std::vector<std::string> ids;
        for (const auto& r : d.records) ids.push_back(r.id);
        return ids;
      })
      .def_property_readonly("labels", [](const EegDataset& d) {
        std::vector<int> out;
        for (const auto& r : d.records) out.push_back(r.label);
        return out;
      })
      .def_property_readonly("targets", [](const EegDataset& d) {
        std::vector<int> out;
        for (const auto& r : d.records) out.push_back(r.target);
        return out;
      })
      .def_property_readonly("samples", [](const EegDataset& d) {
        py::array_t<double> out({d.records.size(), kWindowLength});
        auto* p = out.mutable_data();
        for (const auto& r : d.records) p = std::copy(r.samples.begin(), r.samples.end(), p);
        return out;
      })
      .def_readonly("splits", &EegDataset::splits)
      .def("label_counts", &EegDataset::label_counts)
      .def("target_counts", &EegDataset::target_counts)
      .def("indices", &EegDataset::indices)
      .def("count", &EegDataset::count);

  m.def("load_csv", [](const std::filesystem::path& path, bool verify) { return load_csv(path, LoadOptions{verify}); },
        py::arg("path"), py::arg("verify_official_counts") = false);
  m.def("write_csv", &write_csv, py::arg("path"), py::arg("dataset"));
  m.def("make_synthetic_dataset", &make_synthetic_dataset, py::arg("per_label"), py::arg("seed") = 42);
  m.def("synthetic_window", &synthetic_window, py::arg("label"), py::arg("seed"));
  m.def("map_group", &map_group, py::arg("dataset"), py::arg("mode"));
  m.def("stratified_split",
        [](const EegDataset& d, std::uint64_t seed, double train, double val, double test) {
          return stratified_split(d, SplitRatios{train, val, test}, seed);
        },
        py::arg("dataset"), py::arg("seed") = 42, py::arg("train") = 0.76, py::arg("val") = 0.12, py::arg("test") = 0.12);
  m.def("compute_norm_stats", &compute_norm_stats, py::arg("dataset"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("group_mode", &TrainConfig::group_mode)
      .def_readwrite("width_multiplier", &TrainConfig::width_multiplier)
      .def_readwrite("shuffle", &TrainConfig::shuffle)
      .def_readwrite("eval_threads", &TrainConfig::eval_threads);

  m.def("train",
        [](const EegDataset& dataset, const TrainConfig& config) {
          py::gil_scoped_release release;
          auto result = train(Model::build(config.model_config()), dataset, config);
          std::vector<std::tuple<std::size_t, double, double, double, bool>> reports;
          for (const auto& r : result.reports)
            reports.emplace_back(r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy, r.best);
          return std::pair{std::move(result.best), std::move(reports)};
        },
        py::arg("dataset"), py::arg("config"),
        "Returns (best checkpoint, [(epoch, train_loss, train_acc, val_acc, best), ...])");
  m.def("evaluate",
        [](const Checkpoint& c, const EegDataset& dataset, Split split, std::size_t threads) {
          const auto e = evaluate(c, dataset, split, threads);
          std::vector<std::vector<std::size_t>> matrix(e.matrix.classes(), std::vector<std::size_t>(e.matrix.classes()));
          for (std::size_t i = 0; i < e.matrix.classes(); ++i)
            for (std::size_t j = 0; j < e.matrix.classes(); ++j) matrix[i][j] = e.matrix.at(i, j);
          return py::dict(py::arg("accuracy") = e.accuracy, py::arg("confusion") = matrix,
                          py::arg("table") = e.matrix.to_table(c.metadata.class_names));
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("split") = Split::test, py::arg("threads") = 1);

  m.def("summarize_load_log",
        [](const std::string& csv) {
          std::istringstream in(csv);
          py::list rows;
          for (const auto& r : summarize(read_load_log(in))) rows.append(row_dict(r));
          return rows;
        },
        py::arg("csv_text"), "Per-label summary of a raw load log (label,client,start_us,latency_us,status)");

  m.def("render_svg", [](const Array& samples, const std::string& title) { return render_svg(as_window(samples), title); },
        py::arg("samples"), py::arg("title") = "");

  m.def("run_scenario",
        [](const std::string& script, const std::string& patient_id) {
          std::istringstream in(script);
          SimulatorConfig config;
          config.patient_id = patient_id;
          MemoryEventSink events;
          const auto result = run_scenario(in, config, ContactBook{}, &events);
          std::vector<std::string> stored;
          for (const auto& e : events.events) stored.push_back(event_to_json(e));
          return py::dict(py::arg("final_state") = to_string(result.final_state),
                          py::arg("notification_log") = result.notification_log, py::arg("events") = stored);
        },
        py::arg("script"), py::arg("patient_id") = "patient-1");
}
