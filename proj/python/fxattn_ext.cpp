#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "fxattn/bench.hpp"
#include "fxattn/costmodel.hpp"
#include "fxattn/error.hpp"
#include "fxattn/fxp.hpp"
#include "fxattn/model.hpp"
#include "fxattn/softmax_lut.hpp"

namespace py = pybind11;
using namespace fxattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix<double> to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix<double>(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

ForwardMode mode_of(const std::optional<FxFormat>& fmt) {
  return fmt ? ForwardMode::fixed_point(*fmt) : ForwardMode::floating();
}

// Weights plus config, converted to an engine on demand.
struct PyModel {
  ModelConfig config;
  ModelWeights<double> weights;

  Array forward(const Array& sample, const std::optional<FxFormat>& fmt) const {
    const auto p = InferenceModel(config, weights, mode_of(fmt)).forward(to_matrix(sample));
    return Array(static_cast<py::ssize_t>(p.size()), p.data());
  }

  Array predict(const Array& tracks, const std::optional<FxFormat>& fmt, std::size_t jobs) const {
    if (tracks.ndim() != 3) throw ShapeError("expected tracks of shape (n, seq_len, num_features)");
    const auto n = static_cast<std::size_t>(tracks.shape(0));
    const auto rows = static_cast<std::size_t>(tracks.shape(1));
    const auto cols = static_cast<std::size_t>(tracks.shape(2));
    const InferenceModel engine(config, weights, mode_of(fmt));
    Array out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(config.num_classes)});
    const double* src = tracks.data();
    double* dst = out.mutable_data();
    py::gil_scoped_release release;
    parallel_for(n, jobs, [&](std::size_t i) {
      const Matrix<double> x(rows, cols, std::vector<double>(src + i * rows * cols, src + (i + 1) * rows * cols));
      const auto p = engine.forward(x);
      std::copy(p.begin(), p.end(), dst + i * config.num_classes);
    });
    return out;
  }
};

// Without explicit counts, trailing all-zero rows are treated as padding.
Dataset to_dataset(const Array& tracks, const py::array_t<std::int64_t>& labels,
                   const std::optional<py::array_t<std::int64_t>>& counts = std::nullopt) {
  if (tracks.ndim() != 3 || tracks.shape(1) != static_cast<py::ssize_t>(kMaxTracks) ||
      tracks.shape(2) != static_cast<py::ssize_t>(kTrackFeatures)) {
    throw ShapeError("expected tracks of shape (n, 15, 6)");
  }
  const auto n = static_cast<std::size_t>(tracks.shape(0));
  if (labels.ndim() != 1 || static_cast<std::size_t>(labels.shape(0)) != n) throw ShapeError("labels length != n");
  if (counts && (counts->ndim() != 1 || static_cast<std::size_t>(counts->shape(0)) != n)) {
    throw ShapeError("n_tracks length != n");
  }
  Dataset ds;
  const auto stride = kMaxTracks * kTrackFeatures;
  for (std::size_t i = 0; i < n; ++i) {
    JetSample s;
    s.jet_id = i;
    s.tracks = Matrix<double>(kMaxTracks, kTrackFeatures,
                              std::vector<double>(tracks.data() + i * stride, tracks.data() + (i + 1) * stride));
    s.label = static_cast<Flavor>(labels.at(static_cast<py::ssize_t>(i)));
    if (counts) {
      const auto c = counts->at(static_cast<py::ssize_t>(i));
      if (c < 0 || c > static_cast<std::int64_t>(kMaxTracks)) throw ShapeError("n_tracks out of range");
      s.n_tracks = static_cast<std::size_t>(c);
    } else {
      s.n_tracks = kMaxTracks;
      while (s.n_tracks > 0) {
        const auto row = s.tracks.row(s.n_tracks - 1);
        if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) break;
        --s.n_tracks;
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

py::dict auc_dict(const AucSummary& a) {
  py::dict d;
  d["b"] = a.b;
  d["c"] = a.c;
  d["light"] = a.light;
  d["macro"] = a.macro;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fxattn, m) {
  m.doc() = "Fixed-point streaming transformer emulator";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<StreamError>(m, "StreamError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::enum_<Overflow>(m, "Overflow").value("Saturate", Overflow::Saturate).value("Wrap", Overflow::Wrap);
  py::enum_<Rounding>(m, "Rounding")
      .value("TruncateTowardNegInf", Rounding::TruncateTowardNegInf)
      .value("RoundNearestEven", Rounding::RoundNearestEven);

  py::class_<FxFormat>(m, "FxFormat")
      .def(py::init<int, int, Overflow, Rounding>(), py::arg("int_bits") = 10, py::arg("frac_bits") = 10,
           py::arg("overflow") = Overflow::Saturate, py::arg("rounding") = Rounding::RoundNearestEven)
      .def_static("parse", [](const std::string& s) { return FxFormat::parse(s); })
      .def_property_readonly("int_bits", [](const FxFormat& f) { return int{f.int_bits}; })
      .def_property_readonly("frac_bits", [](const FxFormat& f) { return int{f.frac_bits}; })
      .def_readonly("overflow", &FxFormat::overflow)
      .def_readonly("rounding", &FxFormat::rounding)
      .def_property_readonly("width", &FxFormat::width)
      .def_property_readonly("lsb", &FxFormat::lsb)
      .def_property_readonly("max_value", &FxFormat::max_value)
      .def_property_readonly("min_value", &FxFormat::min_value)
      .def("__str__", &FxFormat::to_string)
      .def("__repr__", [](const FxFormat& f) { return "FxFormat('" + f.to_string() + "')"; })
      .def(py::self == py::self);

  py::class_<FxValue>(m, "FxValue")
      .def(py::init<std::int64_t, FxFormat>(), py::arg("raw"), py::arg("format"))
      .def_readonly("raw", &FxValue::raw)
      .def_readonly("format", &FxValue::format)
      .def_property_readonly("value", &dequantize)
      .def("__float__", &dequantize)
      .def("__add__", &fx_add)
      .def("__sub__", &fx_sub)
      .def("__mul__", &fx_mul)
      .def(py::self == py::self)
      .def("__repr__", [](const FxValue& v) {
        return "FxValue(raw=" + std::to_string(v.raw) + ", format='" + v.format.to_string() + "')";
      });

  m.def("quantize", &quantize, py::arg("x"), py::arg("fmt"));
  m.def("dequantize", &dequantize, py::arg("v"));
  m.def("fx_add", &fx_add);
  m.def("fx_sub", &fx_sub);
  m.def("fx_mul", &fx_mul);

  m.def("softmax_exact", [](const std::vector<double>& v) { return softmax_exact(v); }, py::arg("v"));
  m.def(
      "softmax_lut",
      [](const std::vector<double>& v, const FxFormat& fmt, std::size_t exp_size, std::size_t inv_size) {
        SoftmaxLutSpec spec;
        spec.exp_size = exp_size;
        spec.inv_size = inv_size;
        const auto cfg = make_softmax_config(spec, v.size(), fmt);
        std::vector<FxValue> q;
        for (double x : v) q.push_back(quantize(x, fmt));
        std::vector<double> out;
        for (const auto& p : softmax_lut(cfg, q)) out.push_back(dequantize(p));
        return out;
      },
      py::arg("v"), py::arg("fmt") = FxFormat(10, 10), py::arg("exp_size") = 1024, py::arg("inv_size") = 1024,
      "Quantize v, apply the table softmax and return the dequantized probabilities.");

  py::class_<PyModel>(m, "Model")
      .def_static(
          "analytic",
          [](std::size_t feature) {
            const ModelConfig cfg;
            return PyModel{cfg, make_analytic_weights(cfg, feature)};
          },
          py::arg("feature") = static_cast<std::size_t>(kSd0))
      .def_static("zeros", [] {
        const ModelConfig cfg;
        return PyModel{cfg, make_zero_weights(cfg)};
      })
      .def_static("load", [](const std::string& path) {
        auto l = load_weights(path);
        return PyModel{std::move(l.config), std::move(l.weights)};
      })
      .def("save", [](const PyModel& p, const std::string& path) { save_weights(path, p.config, p.weights); })
      .def("to_json", [](const PyModel& p) { return weights_to_json(p.config, p.weights); })
      .def_property_readonly("param_count", [](const PyModel& p) { return param_count(p.config); })
      .def_property_readonly("seq_len", [](const PyModel& p) { return p.config.seq_len; })
      .def_property_readonly("num_features", [](const PyModel& p) { return p.config.num_features; })
      .def_property_readonly("num_classes", [](const PyModel& p) { return p.config.num_classes; })
      .def_property_readonly("tensor_names", [](const PyModel& p) { return tensor_names(p.config); })
      .def("forward", &PyModel::forward, py::arg("sample"), py::arg("fmt") = std::nullopt,
           "Class probabilities [b, c, light] for one (seq_len, num_features) sample; float when fmt is None.")
      .def("predict", &PyModel::predict, py::arg("tracks"), py::arg("fmt") = std::nullopt, py::arg("jobs") = 1);

  m.def(
      "generate_synthetic",
      [](std::size_t n, std::uint64_t seed) {
        const auto ds = generate_synthetic(n, seed);
        Array tracks({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(kMaxTracks),
                      static_cast<py::ssize_t>(kTrackFeatures)});
        py::array_t<std::int64_t> labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n)});
        py::array_t<std::int64_t> counts(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n)});
        double* t = tracks.mutable_data();
        std::int64_t* l = labels.mutable_data();
        std::int64_t* c = counts.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
          const auto& s = ds.samples[i];
          std::copy(s.tracks.data.begin(), s.tracks.data.end(), t + i * kMaxTracks * kTrackFeatures);
          l[i] = static_cast<std::int64_t>(s.label);
          c[i] = static_cast<std::int64_t>(s.n_tracks);
        }
        py::dict d;
        d["tracks"] = tracks;
        d["labels"] = labels;
        d["n_tracks"] = counts;
        return d;
      },
      py::arg("n"), py::arg("seed") = 1,
      "Synthetic jets as numpy arrays: tracks (n, 15, 6), labels (0=b, 1=c, 2=light), n_tracks.");
  m.def(
      "dataset_to_csv",
      [](const Array& tracks, const py::array_t<std::int64_t>& labels,
         const std::optional<py::array_t<std::int64_t>>& n_tracks) {
        return dataset_to_csv(to_dataset(tracks, labels, n_tracks));
      },
      py::arg("tracks"), py::arg("labels"), py::arg("n_tracks") = py::none());

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<bool>& positive) {
        std::vector<std::uint8_t> pos(positive.begin(), positive.end());
        return roc_auc(scores, pos);
      },
      py::arg("scores"), py::arg("positive"));
  m.def(
      "evaluate_auc",
      [](const Array& probs, const py::array_t<std::int64_t>& labels) {
        if (probs.ndim() != 2 || probs.shape(1) != 3) throw ShapeError("expected probabilities of shape (n, 3)");
        const auto n = static_cast<std::size_t>(probs.shape(0));
        std::vector<std::vector<double>> p(n);
        Dataset ds;
        ds.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          p[i].assign(probs.data() + 3 * i, probs.data() + 3 * i + 3);
          ds.samples[i].label = static_cast<Flavor>(labels.at(static_cast<py::ssize_t>(i)));
        }
        return auc_dict(evaluate_auc(p, ds));
      },
      py::arg("probs"), py::arg("labels"));

  m.def("total_multipliers", [] { return total_multipliers(count_multipliers(ModelConfig{})); });
  m.def(
      "estimate_latency",
      [](std::uint64_t rf) {
        const auto r = estimate_latency(ModelConfig{}, ReuseFactor(rf), DeviceProfile::vu13p());
        py::dict d;
        d["latency_cycles"] = r.latency_cycles;
        d["latency_us"] = r.latency_us;
        d["ii_cycles"] = r.ii_cycles;
        d["ii_ns"] = r.ii_ns;
        return d;
      },
      py::arg("rf") = 1, "Latency of the default model on the VU13P profile.");
  m.def(
      "estimate_resources",
      [](std::uint64_t rf, const FxFormat& fmt) {
        const auto dev = DeviceProfile::vu13p();
        const auto r = estimate_resources(ModelConfig{}, fmt, ReuseFactor(rf), dev);
        py::dict d;
        d["dsp"] = r.total.dsp;
        d["lut"] = r.total.lut;
        d["ff"] = r.total.ff;
        d["bram"] = r.total.bram;
        d["dsp_util"] = r.dsp_util;
        d["over_subscribed"] = r.over_subscribed();
        d["csv"] = r.to_csv();
        return d;
      },
      py::arg("rf") = 1, py::arg("fmt") = FxFormat(10, 10));
}
