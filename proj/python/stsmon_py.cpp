#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "stsmon/error.hpp"
#include "stsmon/monitor.hpp"
#include "stsmon/png_io.hpp"
#include "stsmon/simulator.hpp"

namespace py = pybind11;
using namespace stsmon;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

GreyImage to_image(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return GreyImage(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const GreyImage& img) {
  Array out({img.rows(), img.cols()});
  std::memcpy(out.mutable_data(), img.pixels().data(), img.size() * sizeof(double));
  return out;
}

py::array_t<std::uint8_t> mask_array(const std::vector<std::uint8_t>& mask, std::size_t rows, std::size_t cols) {
  py::array_t<std::uint8_t> out({rows, cols});
  std::memcpy(out.mutable_data(), mask.data(), mask.size());
  return out;
}

py::bytes as_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

SmsConfig sms_config(const std::string& kind, int w, bool epwmv_square) {
  SmsConfig c{parse_sms_kind(kind), w, !epwmv_square};
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_stsmon, m) {
  m.doc() = "Monitoring of stochastic textured surfaces";

  static py::exception<Error> error(m, "StsmonError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      py::object instance = exc(std::string(to_string(e.code())) + ": " + e.what());
      instance.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  m.def(
      "generate_sar",
      [](std::size_t rows, std::size_t cols, double phi1, double phi2, double sigma, std::uint64_t seed) {
        return to_array(generate_sar(SarParams{phi1, phi2, sigma, rows, cols, seed}));
      },
      py::arg("rows") = 250, py::arg("cols") = 250, py::arg("phi1") = 0.6, py::arg("phi2") = 0.35,
      py::arg("sigma") = 1.0, py::arg("seed") = 0);
  m.def("to_greyscale", [](const Array& a) { return to_array(to_greyscale(to_image(a))); });
  m.def("standardize", [](const Array& a) { return to_array(standardize(to_image(a))); });
  m.def(
      "inject_defect",
      [](const Array& field, const std::string& kind, std::size_t size_rows, std::size_t size_cols,
         std::optional<std::array<std::size_t, 2>> top_left, std::uint64_t seed, double phi1, double phi2,
         double sigma) {
        DefectSpec d;
        d.kind = parse_defect_kind(kind);
        d.size_rows = size_rows;
        d.size_cols = size_cols;
        d.top_left = top_left;
        d.seed = seed;
        const GreyImage img = to_image(field);
        const InjectedDefect inj = inject_defect(img, d, SarParams{phi1, phi2, sigma, img.rows(), img.cols(), 0});
        return py::make_tuple(to_array(inj.field), mask_array(inj.mask, img.rows(), img.cols()),
                              py::make_tuple(inj.top, inj.left));
      },
      py::arg("field"), py::arg("kind") = "white_noise_ellipse", py::arg("size_rows") = 5, py::arg("size_cols") = 5,
      py::arg("top_left") = py::none(), py::arg("seed") = 0, py::arg("phi1") = 0.6, py::arg("phi2") = 0.35,
      py::arg("sigma") = 1.0);
  m.def("derive_seed", [](std::uint64_t master, std::uint64_t index) { return derive_seed(master, {index}); });

  m.def("read_png", [](const std::string& path) { return to_array(read_png(path)); });
  m.def(
      "encode_png",
      [](const Array& a, int bit_depth) {
        const GreyImage img = to_image(a);
        if (bit_depth != 8 && bit_depth != 16) throw py::value_error("bit_depth must be 8 or 16");
        return as_bytes(bit_depth == 8 ? encode_png_grey8(img) : encode_png_grey16(img));
      },
      py::arg("image"), py::arg("bit_depth") = 8);

  py::class_<TrainedModel>(m, "Model")
      .def_property_readonly("l", [](const TrainedModel& t) { return t.tree.l(); })
      .def_property_readonly("leaf_count", [](const TrainedModel& t) { return t.tree.leaf_count(); })
      .def_property_readonly("depth", [](const TrainedModel& t) { return t.tree.depth(); })
      .def_property_readonly("cv_report",
                             [](const TrainedModel& t) {
                               py::list out;
                               for (const auto& e : t.selection.report) {
                                 if (e.evaluated) out.append(py::make_tuple(e.l, e.cv_error));
                               }
                               return out;
                             })
      .def("residuals",
           [](const TrainedModel& t, const Array& raw) {
             return to_array(residual_image(t.tree, standardize(to_image(raw))).values);
           })
      .def("to_bytes", [](const TrainedModel& t) { return as_bytes(serialize_model(t)); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_model(from_bytes(b)); });

  m.def(
      "train",
      [](const Array& raw, std::vector<int> l_candidates, int fixed_l, int min_leaf, int max_depth, int folds,
         double cv_tolerance, std::uint64_t seed) {
        FitConfig c;
        if (!l_candidates.empty()) c.l_candidates = std::move(l_candidates);
        c.min_leaf_size = min_leaf;
        c.max_depth = max_depth;
        c.cv_folds = folds;
        c.cv_tolerance = cv_tolerance;
        c.seed = seed;
        const GreyImage img = to_image(raw);
        py::gil_scoped_release release;
        return train_model(img, c, fixed_l);
      },
      py::arg("image"), py::arg("l_candidates") = std::vector<int>{}, py::arg("fixed_l") = 0,
      py::arg("min_leaf") = 30, py::arg("max_depth") = 20, py::arg("folds") = 5, py::arg("cv_tolerance") = 0.0,
      py::arg("seed") = 0);

  py::class_<CalibrationBundle>(m, "Bundle")
      .def_property_readonly("kind", [](const CalibrationBundle& b) { return std::string(to_string(b.sms.kind)); })
      .def_property_readonly("w", [](const CalibrationBundle& b) { return b.sms.w; })
      .def_readonly("alpha", &CalibrationBundle::alpha)
      .def_readonly("n_d", &CalibrationBundle::n_d)
      .def_readonly("control_limit", &CalibrationBundle::control_limit)
      .def_readonly("center_line", &CalibrationBundle::center_line)
      .def_readonly("lcl", &CalibrationBundle::lcl)
      .def_readonly("ucl", &CalibrationBundle::ucl)
      .def_readonly("diag_threshold", &CalibrationBundle::diag_threshold)
      .def_readonly("phase1_max", &CalibrationBundle::phase1_max)
      .def_property_readonly("model", [](const CalibrationBundle& b) { return b.model; })
      .def(
          "monitor",
          [](const CalibrationBundle& b, const Array& raw, bool diagnostic) {
            const GreyImage img = to_image(raw);
            MonitorReport r;
            {
              py::gil_scoped_release release;
              r = monitor_image(img, b, diagnostic);
            }
            py::dict out;
            out["s"] = r.s;
            out["alarmed"] = r.alarmed;
            if (b.two_sided()) out["s_min"] = r.s_min;
            out["sms"] = to_array(r.sms.values);
            if (r.diagnostic) {
              out["diagnostic"] = mask_array(r.diagnostic->full_size(img.rows(), img.cols()), img.rows(), img.cols());
              out["black_pixels"] = r.diagnostic->black_count();
            }
            return out;
          },
          py::arg("image"), py::arg("diagnostic") = false)
      .def("to_bytes", [](const CalibrationBundle& b) { return as_bytes(serialize_bundle(b)); })
      .def("manifest", [](const CalibrationBundle& b) { return bundle_manifest_json(b); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_bundle(from_bytes(b)); });

  m.def(
      "calibrate",
      [](const std::vector<Array>& phase1, const TrainedModel& model, const std::string& stat, int w, double alpha,
         int n_d, std::optional<int> exceedances, bool epwmv_square) {
        std::vector<GreyImage> images;
        for (const auto& a : phase1) images.push_back(to_image(a));
        CalibrationOptions o;
        o.alpha = alpha;
        o.n_d = n_d;
        o.exceedances = exceedances;
        o.validate();
        const SmsConfig cfg = sms_config(stat, w, epwmv_square);
        py::gil_scoped_release release;
        return calibrate(ImageSource::from_images(std::move(images)), model, cfg, o);
      },
      py::arg("phase1"), py::arg("model"), py::arg("stat") = "bp", py::arg("w") = 15, py::arg("alpha") = 0.003,
      py::arg("n_d") = 10, py::arg("exceedances") = py::none(), py::arg("epwmv_square") = false);

  m.def(
      "power_experiment",
      [](std::size_t replicates, std::size_t phase1, std::size_t phase2, const std::vector<std::string>& stats,
         const std::vector<std::pair<std::size_t, std::size_t>>& defects, const std::string& defect_kind,
         std::size_t rows, std::size_t cols, std::size_t training_size, double alpha, int fixed_l,
         std::uint64_t seed) {
        PowerExperimentConfig cfg;
        cfg.replicates = static_cast<int>(replicates);
        cfg.phase1_count = phase1;
        cfg.phase2_count = phase2;
        cfg.alpha = alpha;
        cfg.fixed_l = fixed_l;
        cfg.seed = seed;
        cfg.process.rows = rows;
        cfg.process.cols = cols;
        cfg.training_rows = cfg.training_cols = training_size;
        for (const auto& s : stats) {
          const auto colon = s.find(':');
          if (colon == std::string::npos) throw py::value_error("statistic must be KIND:W");
          cfg.statistics.push_back(sms_config(s.substr(0, colon), std::stoi(s.substr(colon + 1)), false));
        }
        for (auto [r, c] : defects) {
          DefectSpec d;
          d.kind = parse_defect_kind(defect_kind);
          d.size_rows = r;
          d.size_cols = c;
          cfg.defects.push_back(d);
        }
        std::string csv;
        {
          py::gil_scoped_release release;
          csv = power_csv(run_power_experiment(cfg));
        }
        return csv;
      },
      py::arg("replicates") = 3, py::arg("phase1") = 300, py::arg("phase2") = 50,
      py::arg("stats") = std::vector<std::string>{"bp:5"},
      py::arg("defects") = std::vector<std::pair<std::size_t, std::size_t>>{{5, 5}},
      py::arg("defect_kind") = "white_noise_ellipse", py::arg("rows") = 250, py::arg("cols") = 250,
      py::arg("training_size") = 500, py::arg("alpha") = 0.003, py::arg("fixed_l") = 0, py::arg("seed") = 0);
}
