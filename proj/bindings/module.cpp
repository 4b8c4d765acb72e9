// Python bindings: numpy in, numpy out, C++ core underneath.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "gradmix/attribution.hpp"
#include "gradmix/augment.hpp"
#include "gradmix/checkpoint.hpp"
#include "gradmix/config.hpp"
#include "gradmix/data.hpp"
#include "gradmix/evaluate.hpp"
#include "gradmix/metrics.hpp"
#include "gradmix/scoring.hpp"
#include "gradmix/train.hpp"

namespace py = pybind11;
using namespace gradmix;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& arr) {
    std::vector<int> shape(arr.ndim());
    for (py::ssize_t d = 0; d < arr.ndim(); ++d) shape[d] = static_cast<int>(arr.shape(d));
    Tensor t(shape);
    std::copy(arr.data(), arr.data() + arr.size(), t.data.begin());
    return t;
}

py::array_t<float> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> arr(shape);
    std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
    return arr;
}

std::vector<ScoredSample> make_samples(const std::vector<double>& known,
                                       const std::vector<double>& unknown) {
    std::vector<ScoredSample> s;
    for (double v : known) s.push_back({v, true});
    for (double v : unknown) s.push_back({v, false});
    return s;
}

/// Owns an encoder together with the config it was built from.
struct Model {
    RunConfig cfg;
    Encoder enc;

    static RunConfig parse(const std::string& config_json, bool validate) {
        RunConfig cfg = config_from_json(config_json);
        if (validate) cfg.validate();
        return cfg;
    }

    Model(const std::string& config_json, bool validate)
        : cfg(parse(config_json, validate)), enc(cfg.encoder, cfg.seed) {}

    explicit Model(const Checkpoint& ckpt)
        : cfg(config_from_json(ckpt.config_json)), enc(cfg.encoder, cfg.seed) {
        restore_model(enc, ckpt);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Contrastive open-set recognition lab (C++ core)";

    py::register_exception<Error>(m, "GradmixError");

    // ------------------------------------------------------------ model
    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, bool>(), py::arg("config_json"),
             py::arg("validate") = true)
        .def_property_readonly("config_json", [](const Model& s) { return config_to_json(s.cfg); })
        .def_property_readonly("param_count", [](const Model& s) { return s.enc.param_count(); })
        .def(
            "train",
            [](Model& s, const FloatArray& images, const std::vector<int>& labels,
               const std::string& checkpoint_dir) {
                ImageDataset ds{to_tensor(images), labels};
                TrainResult r = train(s.enc, s.cfg, ds, checkpoint_dir);
                py::dict out;
                out["epoch_loss"] = r.log.epoch_loss;
                out["epochs_run"] = r.epochs_run;
                return out;
            },
            py::arg("images"), py::arg("labels"), py::arg("checkpoint_dir") = "")
        .def(
            "embed",
            [](Model& s, const FloatArray& images, int batch_size) {
                return to_array(embed_images(s.enc, to_tensor(images), batch_size));
            },
            py::arg("images"), py::arg("batch_size") = 64)
        .def(
            "logits",
            [](Model& s, const FloatArray& images, int batch_size) {
                return to_array(logits_images(s.enc, to_tensor(images), batch_size));
            },
            py::arg("images"), py::arg("batch_size") = 64)
        .def(
            "attribution",
            [](Model& s, const FloatArray& images, const std::vector<int>& labels) {
                Tensor originals = to_tensor(images);
                std::mt19937 rng(s.cfg.seed);
                ViewBatch views = standard_views(originals, rng);
                AttributionMap maps =
                    attribution_maps(s.enc, originals, views.view_b, labels, s.cfg);
                return to_array(maps.values);
            },
            py::arg("images"), py::arg("labels"))
        .def("save",
             [](const Model& s, const std::string& path) {
                 save_checkpoint(snapshot_model(s.enc, s.cfg, s.cfg.epochs, 0, ""), path);
             })
        .def_static("load",
                    [](const std::string& path) { return Model(load_checkpoint(path)); });

    // ------------------------------------------------------------- data
    m.def(
        "synth_blobs",
        [](const std::vector<std::tuple<std::array<float, 3>, float, float>>& classes, int size,
           int n_per_class, std::uint32_t seed) {
            std::vector<BlobClassSpec> specs;
            for (const auto& [color, row, col] : classes) {
                BlobClassSpec s;
                s.color = color;
                s.center_row = row;
                s.center_col = col;
                specs.push_back(s);
            }
            ImageDataset ds = synth_blobs(specs, size, n_per_class, seed);
            return py::make_tuple(to_array(ds.images), ds.labels);
        },
        py::arg("classes"), py::arg("size") = 32, py::arg("n_per_class") = 96,
        py::arg("seed") = 0,
        "classes: list of ((r, g, b), center_row, center_col) per class");

    m.def(
        "corrupt",
        [](const FloatArray& images, const std::string& type, int severity, std::uint32_t seed) {
            CorruptionSpec spec{parse_corruption(type), severity};
            return to_array(corrupt(to_tensor(images), spec, seed));
        },
        py::arg("images"), py::arg("type"), py::arg("severity"), py::arg("seed") = 0);

    // ---------------------------------------------------------- scoring
    m.def(
        "knn_scores",
        [](const FloatArray& train_emb, const std::vector<int>& train_labels, int k,
           const FloatArray& test_emb) {
            FeatureBank bank(to_tensor(train_emb), train_labels, k);
            Tensor q = to_tensor(test_emb);
            std::vector<double> scores;
            std::vector<int> predicted;
            for (int i = 0; i < q.shape[0]; ++i) {
                std::vector<float> row(q.data.begin() + std::size_t(i) * q.shape[1],
                                       q.data.begin() + std::size_t(i + 1) * q.shape[1]);
                DetectionResult r = knn_osr_score(bank, row);
                scores.push_back(r.degenerate ? 0.0 : r.score);
                predicted.push_back(r.predicted);
            }
            return py::make_tuple(scores, predicted);
        },
        py::arg("train_embeddings"), py::arg("train_labels"), py::arg("k"),
        py::arg("test_embeddings"));

    m.def(
        "twonn_id",
        [](const FloatArray& points) {
            TwoNNResult r = twonn_id(to_tensor(points));
            return py::make_tuple(r.id_estimate, r.skipped_duplicates);
        },
        py::arg("points"));

    // ---------------------------------------------------------- metrics
    m.def(
        "detection_metrics",
        [](const std::vector<double>& known, const std::vector<double>& unknown) {
            auto s = make_samples(known, unknown);
            py::dict out;
            out["auroc"] = auroc(s);
            out["tnr_at_tpr95"] = tnr_at_tpr(s, 0.95);
            out["dtacc"] = dtacc(s);
            out["auin"] = aupr(s, PositiveSide::In);
            out["auout"] = aupr(s, PositiveSide::Out);
            return out;
        },
        py::arg("known_scores"), py::arg("unknown_scores"));

    m.def("auroc",
          [](const std::vector<double>& known, const std::vector<double>& unknown) {
              return auroc(make_samples(known, unknown));
          });
    m.def("openness", &openness, py::arg("known_classes"), py::arg("unknown_classes"));
}
