#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "ssat/cli.hpp"
#include "ssat/eval.hpp"
#include "ssat/image_io.hpp"
#include "ssat/nets.hpp"

namespace py = pybind11;
using namespace ssat;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  std::vector<int> shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<float> data(static_cast<size_t>(a.size()));
  std::memcpy(data.data(), a.data(), sizeof(float) * data.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::memcpy(a.mutable_data(), t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
  return a;
}

py::array_t<uint8_t> labels_to_array(const LabelMap& lm) {
  py::array_t<uint8_t> a({static_cast<py::ssize_t>(lm.h), static_cast<py::ssize_t>(lm.w)});
  std::memcpy(a.mutable_data(), lm.ids.data(), lm.ids.size());
  return a;
}

LabelMap labels_from_array(const py::array_t<uint8_t, py::array::c_style>& a) {
  if (a.ndim() != 2) throw ConfigError("labels: expected a 2-d uint8 array");
  LabelMap lm;
  lm.h = static_cast<int>(a.shape(0));
  lm.w = static_cast<int>(a.shape(1));
  lm.ids.assign(a.data(), a.data() + a.size());
  return lm;
}

json parse(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(std::string(what) + ": invalid JSON");
  return j;
}

py::dict report_to_dict(const MetricsReport& r) {
  py::dict d;
  d["experiment_id"] = r.experiment_id;
  d["attack_type"] = attack_type_name(r.attack_type);
  d["success_mode"] = success_mode_name(r.success_mode);
  d["xi"] = r.xi;
  d["lambda0"] = r.lambda0;
  if (r.manipulated_rate) d["manipulated_rate"] = *r.manipulated_rate;
  d["preserved_rate"] = r.preserved_rate;
  d["n_target_pixels"] = r.n_target_pixels;
  d["n_nontarget_pixels"] = r.n_nontarget_pixels;
  if (r.manipulated_vanish) d["manipulated_vanish"] = *r.manipulated_vanish;
  if (r.manipulated_embed) d["manipulated_embed"] = *r.manipulated_embed;
  if (r.overall_rate) d["overall_rate"] = *r.overall_rate;
  if (r.efficiency_ratio) d["efficiency_ratio"] = *r.efficiency_ratio;
  d["fingerprint"] = r.fingerprint;
  d["failed"] = r.failed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "stealthy segmentation attacks: C++ core";

  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<Dataset>(m, "Dataset")
      .def_static("open", &Dataset::open, py::arg("dir"))
      .def("size", &Dataset::size)
      .def("n_train", &Dataset::n_train)
      .def("n_test", &Dataset::n_test)
      .def("train_indices", &Dataset::train_indices)
      .def("test_indices", &Dataset::test_indices)
      .def("config_json", [](const Dataset& d) { return scene_config_to_json(d.config()).dump(); })
      .def("image",
           [](const Dataset& d, int i) { return to_array(d.sample(i).image); })
      .def("labels",
           [](const Dataset& d, int i) { return labels_to_array(d.sample(i).labels); });

  py::class_<Model>(m, "Model")
      .def_property_readonly("n_params", [](const Model& mod) { return count_params(mod); })
      .def_property_readonly("frozen", [](const Model& mod) { return mod.frozen; })
      .def_property_readonly(
          "kind",
          [](const Model& mod) {
            return mod.config.kind == ModelKind::TargetFCN ? "target_fcn" : "generator_unet";
          })
      .def("save", [](const Model& mod, const std::string& path) { save_checkpoint(mod, path); },
           py::arg("path"));

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("freeze", [](Model& mod) { freeze(mod); });
  m.def("count_params", &count_params);
  m.def("efficiency_ratio",
        [](const Model& g, const Model& t) { return efficiency_ratio(g, t); });

  m.def(
      "generate_scene",
      [](const std::string& cfg_json, uint64_t index) {
        SceneConfig cfg = scene_config_from_json(parse(cfg_json, "scene_config"));
        cfg.validate();
        auto [img, lab] = generate_scene(cfg, index);
        return py::make_tuple(to_array(img), labels_to_array(lab));
      },
      py::arg("scene_config_json"), py::arg("index"));

  m.def(
      "generate_dataset",
      [](const std::string& cfg_json, int n_train, int n_test, const std::string& out_dir,
         int threads) {
        SceneConfig cfg = scene_config_from_json(parse(cfg_json, "scene_config"));
        cfg.validate();
        py::gil_scoped_release nogil;
        generate_dataset(cfg, n_train, n_test, out_dir, threads);
      },
      py::arg("scene_config_json"), py::arg("n_train"), py::arg("n_test"), py::arg("out_dir"),
      py::arg("threads") = 1);

  m.def(
      "pretrain_target",
      [](const Dataset& data, const std::string& cfg_json) {
        PretrainConfig cfg = pretrain_config_from_json(parse(cfg_json, "pretrain_config"));
        cfg.validate();
        PretrainResult res = [&] {
          py::gil_scoped_release nogil;
          return pretrain_target(data, cfg);
        }();
        return py::make_tuple(std::move(res.model), res.test_pixel_accuracy, res.epoch_loss);
      },
      py::arg("data"), py::arg("pretrain_config_json"));

  m.def(
      "build_generator",
      [](int num_classes, int base_width, float width_multiplier, uint64_t seed) {
        ModelConfig cfg;
        cfg.kind = ModelKind::GeneratorUNet;
        cfg.num_classes = num_classes;
        cfg.base_width = base_width;
        cfg.width_multiplier = width_multiplier;
        cfg.validate();
        return build_generator_unet(cfg, seed);
      },
      py::arg("num_classes"), py::arg("base_width") = 16, py::arg("width_multiplier") = 1.0f,
      py::arg("seed") = 0);

  m.def(
      "forward_target",
      [](const Model& mod, const FloatArray& images) {
        Tensor x = to_tensor(images);
        Graph::NoGrad ng;
        return to_array(forward_target(mod, x));
      },
      py::arg("model"), py::arg("images"));

  m.def(
      "forward_generator",
      [](const Model& mod, const FloatArray& images) {
        Tensor x = to_tensor(images);
        Graph::NoGrad ng;
        GeneratorOutput out = forward_generator(mod, x);
        return py::make_tuple(to_array(out.raw_perturbation),
                              to_array(out.regularizer_logits));
      },
      py::arg("model"), py::arg("images"));

  m.def(
      "scale_perturbation",
      [](const FloatArray& raw, float xi) {
        Graph::NoGrad ng;
        return to_array(scale_perturbation(to_tensor(raw), xi));
      },
      py::arg("raw"), py::arg("xi"));

  m.def(
      "apply_perturbation",
      [](const FloatArray& image, const FloatArray& p) {
        Graph::NoGrad ng;
        return to_array(apply_perturbation(to_tensor(image), to_tensor(p)));
      },
      py::arg("image"), py::arg("p"));

  m.def(
      "map_labels",
      [](const FloatArray& logits_chw, const std::string& spec_json) {
        AttackSpec spec = attack_spec_from_json(parse(spec_json, "attack_spec"));
        Tensor logits = to_tensor(logits_chw);
        if (logits.shape().size() != 3) throw ConfigError("map_labels: expected c x h x w");
        spec.validate(logits.shape()[0]);
        TargetMask mask;
        const TargetMask* mp = nullptr;
        if (spec.attack_type != AttackType::Vanish) {
          mask = render_mask(spec.mask_source, logits.shape()[1], logits.shape()[2]);
          mp = &mask;
        }
        StealthyLabels st = map_labels(logits, spec, mp);
        py::array_t<uint8_t> mask_arr({static_cast<py::ssize_t>(st.mask.h),
                                       static_cast<py::ssize_t>(st.mask.w)});
        std::memcpy(mask_arr.mutable_data(), st.mask.bits.data(), st.mask.bits.size());
        return py::make_tuple(labels_to_array(st.labels), mask_arr);
      },
      py::arg("logits_chw"), py::arg("attack_spec_json"));

  m.def(
      "train_attack",
      [](Model& generator, const Model& target, const Dataset& data,
         const std::string& spec_json, const std::string& cfg_json) {
        AttackSpec spec = attack_spec_from_json(parse(spec_json, "attack_spec"));
        AttackTrainConfig cfg =
            attack_train_config_from_json(parse(cfg_json, "train_config"));
        TrainHistory hist = [&] {
          py::gil_scoped_release nogil;
          return train_attack(generator, target, data, spec, cfg);
        }();
        py::list out;
        for (const auto& e : hist.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["adv_loss"] = e.adv_loss;
          d["reg_loss"] = e.reg_loss;
          d["total_loss"] = e.total_loss;
          d["manipulated"] = e.manipulated;
          d["preserved"] = e.preserved;
          out.append(d);
        }
        return out;
      },
      py::arg("generator"), py::arg("target"), py::arg("data"), py::arg("attack_spec_json"),
      py::arg("train_config_json"));

  m.def(
      "evaluate_attack",
      [](const Model& generator, const Model& target, const Dataset& data,
         const std::vector<int>& indices, const std::string& spec_json, float xi) {
        AttackSpec spec = attack_spec_from_json(parse(spec_json, "attack_spec"));
        MetricsReport rep = [&] {
          py::gil_scoped_release nogil;
          return evaluate_attack(generator, target, data, indices, spec, xi);
        }();
        return report_to_dict(rep);
      },
      py::arg("generator"), py::arg("target"), py::arg("data"), py::arg("indices"),
      py::arg("attack_spec_json"), py::arg("xi"));

  m.def(
      "pixel_accuracy",
      [](const Model& mod, const Dataset& data, const std::vector<int>& indices) {
        py::gil_scoped_release nogil;
        return pixel_accuracy(mod, data, indices);
      },
      py::arg("model"), py::arg("data"), py::arg("indices"));

  m.def(
      "render_labelmap",
      [](const py::array_t<uint8_t, py::array::c_style>& labels) {
        std::vector<uint8_t> ppm = render_labelmap(labels_from_array(labels), default_palette());
        return py::bytes(reinterpret_cast<const char*>(ppm.data()), ppm.size());
      },
      py::arg("labels"));

  m.def("run_config_roundtrip", [](const std::string& text) {
    return run_config_to_json(run_config_from_json(parse(text, "run config"))).dump(2);
  });

  m.attr("__version__") = "0.1.0";
}
