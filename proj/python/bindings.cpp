// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "smoothfat/attacks.hpp"
#include "smoothfat/config.hpp"
#include "smoothfat/eval.hpp"
#include "smoothfat/experiment.hpp"
#include "smoothfat/smoothing.hpp"
#include "smoothfat/trainer.hpp"
#include "smoothfat/verify.hpp"

namespace py = pybind11;
using namespace smoothfat;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

struct Model {
    ModelSpec spec;
    ModelParams<float> params;
};

Tensor to_tensor(const FloatArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    FloatArray out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

FloatArray to_array(const std::vector<float>& v, const Shape& shape) { return to_array(Tensor(shape, v)); }

std::vector<int> to_labels(const IntArray& a) { return std::vector<int>(a.data(), a.data() + a.size()); }

// Images given as [n, features] are reshaped to the model's [n, h, w, c].
Tensor model_input(const Model& m, const FloatArray& images) {
    Tensor t = to_tensor(images);
    const std::size_t n = t.shape.empty() ? 0 : t.shape[0];
    Shape shape{n};
    for (std::size_t d : m.spec.input_shape) shape.push_back(d);
    if (numel(shape) != t.size()) throw ShapeError("images do not match the model input shape");
    t.shape = shape;
    return t;
}

py::tuple dataset_tuple(const Dataset& d) {
    return py::make_tuple(to_array(d.images), py::array_t<int>(static_cast<py::ssize_t>(d.labels.size()), d.labels.data()));
}

py::dict attack_dict(const AttackResult& r) {
    py::dict d;
    d["adversarial"] = to_array(r.adversarial);
    d["delta"] = to_array(r.delta, r.adversarial.shape);
    return d;
}

}  // namespace

PYBIND11_MODULE(_smoothfat, m) {
    m.doc() = "Fast adversarial training with loss-convergence smoothing";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
    py::register_exception<TrainingAbort>(m, "TrainingAbort", PyExc_RuntimeError);

    py::class_<Model>(m, "Model")
        .def_static(
            "mlp",
            [](std::size_t inputs, std::vector<std::size_t> hidden, std::size_t classes, std::uint64_t seed) {
                Model model{ModelSpec::mlp(inputs, std::move(hidden), classes), {}};
                model.params = build_model(model.spec, seed);
                return model;
            },
            py::arg("inputs"), py::arg("hidden"), py::arg("classes"), py::arg("seed") = 0)
        .def_static(
            "cnn",
            [](std::vector<std::size_t> input_shape, std::vector<std::size_t> channels, std::size_t classes,
               std::uint64_t seed) {
                Model model{ModelSpec::cnn(Shape(input_shape.begin(), input_shape.end()), std::move(channels), classes),
                            {}};
                model.params = build_model(model.spec, seed);
                return model;
            },
            py::arg("input_shape"), py::arg("channels"), py::arg("classes"), py::arg("seed") = 0)
        .def_static("load",
                    [](const std::string& path) {
                        auto ck = read_checkpoint(path);
                        return Model{ck.spec, ck.params};
                    })
        .def("save",
             [](const Model& self, const std::string& path, std::uint64_t seed, int epoch) {
                 write_checkpoint(path, {self.spec, seed, epoch, nlohmann::json::object(), self.params});
             },
             py::arg("path"), py::arg("seed") = 0, py::arg("epoch") = 0)
        .def_property_readonly("spec", [](const Model& self) { return to_json(self.spec).dump(); })
        .def_property_readonly("classes", [](const Model& self) { return self.spec.classes; })
        .def("flat_params",
             [](const Model& self) {
                 const auto flat = self.params.flatten();
                 return to_array(flat, {flat.size()});
             })
        .def("logits",
             [](const Model& self, const FloatArray& images) {
                 return to_array(predict_logits(self.spec, self.params, model_input(self, images)));
             })
        .def("predict", [](const Model& self, const FloatArray& images) {
            return argmax_rows(predict_logits(self.spec, self.params, model_input(self, images)));
        });

    m.def("load_idx",
          [](const std::string& images, const std::string& labels, std::size_t classes) {
              return dataset_tuple(load_idx(images, labels, classes));
          },
          py::arg("images"), py::arg("labels"), py::arg("classes"));
    m.def("make_blobs",
          [](std::size_t classes, std::size_t per_class, std::size_t dimension, double separation, std::uint64_t seed,
             double noise) { return dataset_tuple(make_blobs(classes, per_class, dimension, separation, seed, noise)); },
          py::arg("classes"), py::arg("per_class"), py::arg("dimension"), py::arg("separation"), py::arg("seed") = 0,
          py::arg("noise") = 0.1);

    m.def("project",
          [](const FloatArray& x, const FloatArray& delta, double xi) {
              Tensor tx = to_tensor(x), td = to_tensor(delta);
              if (tx.shape != td.shape) throw ShapeError("x and delta shapes differ");
              return to_array(project(tx.data, td.data, xi), tx.shape);
          },
          py::arg("x"), py::arg("delta"), py::arg("xi"));
    m.def("fgsm",
          [](const Model& model, const FloatArray& x, const IntArray& y, const FloatArray& delta0, double xi) {
              const Tensor tx = model_input(model, x);
              const Tensor d0 = to_tensor(delta0);
              if (d0.size() != tx.size()) throw ShapeError("delta0 does not match x");
              return attack_dict(fgsm(model.spec, model.params, tx, to_labels(y), d0.data, xi));
          },
          py::arg("model"), py::arg("x"), py::arg("y"), py::arg("delta0"), py::arg("xi"));
    m.def("pgd",
          [](const Model& model, const FloatArray& x, const IntArray& y, const FloatArray& delta0, double xi,
             double step, int steps) {
              const Tensor tx = model_input(model, x);
              const Tensor d0 = to_tensor(delta0);
              if (d0.size() != tx.size()) throw ShapeError("delta0 does not match x");
              return attack_dict(pgd(model.spec, model.params, tx, to_labels(y), d0.data, xi, step, steps));
          },
          py::arg("model"), py::arg("x"), py::arg("y"), py::arg("delta0"), py::arg("xi"), py::arg("step"),
          py::arg("steps"));
    m.def("evaluate",
          [](const Model& model, const FloatArray& images, const IntArray& labels, const std::string& attacks,
             double xi) {
              Dataset d;
              d.images = model_input(model, images);
              d.labels = to_labels(labels);
              d.classes = model.spec.classes;
              return to_json(evaluate(model.spec, model.params, d, parse_attack_list(attacks, xi), xi)).dump();
          },
          py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("attacks"), py::arg("xi"));

    m.def("convergence_stride", &convergence_stride, py::arg("d_prev"), py::arg("gamma_min"), py::arg("gamma_max"));
    m.def("condition", &condition, py::arg("loss"), py::arg("u_prev"), py::arg("gamma"));
    m.def("loss_cs_batch",
          [](double adv_mean, double ben_mean, double u_adv_prev, double u_prev, double gamma, double w1, double w2) {
              EpochStats s;
              s.u_prev = u_prev;
              s.u_adv_prev = u_adv_prev;
              s.gamma = gamma;
              return loss_cs_batch_value(adv_mean, ben_mean, s, w1, w2);
          },
          py::arg("adv_mean"), py::arg("ben_mean"), py::arg("u_adv_prev"), py::arg("u_prev"), py::arg("gamma"),
          py::arg("w1") = 0.0, py::arg("w2") = 1.0);
    m.def("loss_cs_example",
          [](std::vector<double> adv, std::vector<double> ben, double u_adv_prev, double u_prev, double gamma,
             double w1, double w2) {
              EpochStats s;
              s.u_prev = u_prev;
              s.u_adv_prev = u_adv_prev;
              s.gamma = gamma;
              return loss_cs_example_value(adv, ben, s, w1, w2);
          },
          py::arg("adv_losses"), py::arg("ben_losses"), py::arg("u_adv_prev"), py::arg("u_prev"), py::arg("gamma"),
          py::arg("w1") = 0.0, py::arg("w2") = 1.0);
    m.def("lr_at",
          [](int epoch, double base, std::vector<int> decay_epochs, double factor) {
              return lr_at(epoch, base, decay_epochs, factor);
          },
          py::arg("epoch"), py::arg("base_lr"), py::arg("decay_epochs"), py::arg("factor") = 0.1);

    m.def("_train",
          [](const std::string& config_json, const std::string& base_dir, std::vector<std::string> overrides) {
              auto doc = nlohmann::json::parse(config_json);
              for (const auto& o : overrides) apply_override(doc, o);
              ExperimentConfig cfg = parse_experiment(doc, base_dir);
              cfg.overrides = overrides;
              py::gil_scoped_release release;
              return run_experiment(cfg).aggregate.dump();
          },
          py::arg("config_json"), py::arg("base_dir") = "", py::arg("overrides") = std::vector<std::string>{});
    m.def("_verify", [](std::size_t gradient_instances, std::size_t box_examples) {
        VerifyOptions o;
        o.gradient_instances = gradient_instances;
        o.box_examples = box_examples;
        std::vector<py::dict> out;
        for (const auto& r : run_verify_suite(o)) {
            py::dict d;
            d["name"] = r.name;
            d["passed"] = r.passed;
            d["measured"] = r.measured;
            d["tolerance"] = r.tolerance;
            d["detail"] = r.detail;
            out.push_back(d);
        }
        return out;
    });
}
