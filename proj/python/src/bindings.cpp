#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mgalign/alignment.hpp"
#include "mgalign/embedding_store.hpp"
#include "mgalign/errors.hpp"
#include "mgalign/eval_harness.hpp"
#include "mgalign/subtext_metrics.hpp"
#include "mgalign/training.hpp"

namespace py = pybind11;
using namespace mgalign;

namespace {

std::vector<TextTokens> texts_from(const std::vector<std::pair<Mat, Vec>>& items) {
  std::vector<TextTokens> out;
  for (const auto& [tokens, summary] : items) out.push_back({tokens, summary});
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["top1"] = r.top1;
  d["top5"] = r.top5;
  d["map"] = r.map ? py::cast(*r.map) : py::none();
  py::list classes;
  for (const auto& c : r.per_class) {
    py::dict e;
    e["name"] = c.name;
    e["videos"] = c.videos;
    e["correct"] = c.correct;
    e["accuracy"] = c.accuracy;
    classes.append(e);
  }
  d["per_class"] = classes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mgalign, m) {
  m.doc() = "Multi-granularity video-text alignment core";

  // Message format: "<module>.<Kind>: <detail>".
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<EmbeddingDataset>(m, "Dataset")
      .def_readonly("dim", &EmbeddingDataset::dim)
      .def_property_readonly("num_videos", &EmbeddingDataset::num_videos)
      .def_property_readonly("num_classes", &EmbeddingDataset::num_classes)
      .def_property_readonly("class_names",
                             [](const EmbeddingDataset& ds) {
                               std::vector<std::string> out;
                               for (const auto& b : ds.classes) out.push_back(b.class_name);
                               return out;
                             })
      .def_property_readonly("labels",
                             [](const EmbeddingDataset& ds) {
                               std::vector<std::vector<int>> out;
                               for (const auto& v : ds.videos) out.push_back(v.labels);
                               return out;
                             })
      .def("frames", [](const EmbeddingDataset& ds, int i) { return ds.videos.at(static_cast<std::size_t>(i)).frames; })
      .def("global_summary",
           [](const EmbeddingDataset& ds, int c) { return ds.classes.at(static_cast<std::size_t>(c)).global.summary; })
      .def("subset_classes", [](const EmbeddingDataset& ds, const std::vector<int>& ids) { return subset_classes(ds, ids); })
      .def("holdout_split", &holdout_split, py::arg("train_per_class"))
      .def("few_shot_split", &few_shot_split, py::arg("shots"), py::arg("seed") = 0);

  py::class_<ModelParams>(m, "ModelParams")
      .def_property_readonly("dim", &ModelParams::dim)
      .def_readwrite("tau", &ModelParams::tau)
      .def_readwrite("lambda_", &ModelParams::lambda)
      .def_property(
          "variant", [](const ModelParams& p) { return to_string(p.options.variant); },
          [](ModelParams& p, const std::string& v) { p.options.variant = parse_variant(v); })
      .def_property(
          "coarse_form", [](const ModelParams& p) { return to_string(p.options.coarse_form); },
          [](ModelParams& p, const std::string& f) { p.options.coarse_form = parse_coarse_form(f); })
      .def("tensors", [](ModelParams& p) {
        py::dict d;
        for (const auto& t : parameter_tensors(p)) {
          d[py::str(t.name)] = Eigen::Map<const Vec>(t.values.data(), static_cast<Eigen::Index>(t.values.size())).eval();
        }
        return d;
      });

  m.def("load_dataset", [](const std::filesystem::path& root) { return load_dataset(root); });
  m.def("save_dataset", &save_dataset);
  m.def("validate", [](const EmbeddingDataset& ds) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& v : validate(ds).violations) out.emplace_back(v.location, v.message);
    return out;
  });
  m.def("_generate_synthetic", [](const std::string& cfg) { return generate_synthetic(synthetic_config_from_json(cfg)); });

  m.def("cosine_sim", &cosine_sim);
  m.def("cross_attention", &cross_attention, py::arg("q"), py::arg("k"), py::arg("v"));
  m.def(
      "coarse_importance",
      [](const Mat& t_hat, const Mat& frames, bool literal) {
        return coarse_importance(t_hat, frames, literal ? CoarseForm::Literal : CoarseForm::Softmax);
      },
      py::arg("tokens"), py::arg("frames"), py::arg("literal") = false);
  m.def(
      "fine_importance",
      [](const std::vector<std::pair<Mat, Vec>>& subtexts, const Mat& frames) {
        return fine_importance(texts_from(subtexts), frames);
      },
      py::arg("subtexts"), py::arg("frames"));
  m.def(
      "tpp_score",
      [](const Vec& global_summary, const std::vector<Vec>& subtext_summaries, const std::string& alpha,
         const std::string& beta, double epsilon) {
        TppConfig cfg{Scaler::parse(alpha), Scaler::parse(beta), epsilon};
        TextTokens g{Mat(1, global_summary.size()), global_summary};
        std::vector<TextTokens> subs;
        for (const auto& s : subtext_summaries) subs.push_back({Mat(1, s.size()), s});
        const auto b = tpp_score(g, subs, cfg);
        py::dict d;
        d["tpp"] = b.tpp;
        d["sigma"] = b.sigma;
        d["delta"] = b.delta;
        return d;
      },
      py::arg("global_summary"), py::arg("subtext_summaries"), py::arg("alpha") = "identity",
      py::arg("beta") = "identity", py::arg("epsilon") = 1e-6);

  m.def("identity_params", &identity_params, py::arg("dim"));
  m.def(
      "init_params",
      [](int dim, std::uint64_t seed, int hidden, int heads) {
        std::mt19937_64 rng(seed);
        InitOptions o;
        o.hidden = hidden;
        o.heads = heads;
        return init_params(dim, o, rng);
      },
      py::arg("dim"), py::arg("seed") = 0, py::arg("hidden") = 0, py::arg("heads") = 1);
  m.def("save_model", [](const ModelParams& p, const std::vector<std::string>& classes,
                         const std::filesystem::path& file) { save_model({p, classes}, file); });
  m.def("load_model", [](const std::filesystem::path& file) {
    auto sm = load_model(file);
    return std::make_pair(sm.params, sm.trained_classes);
  });

  m.def("score_matrix", &score_matrix, py::arg("dataset"), py::arg("params"), py::arg("threads") = 1);
  m.def("topk_accuracy", [](const Mat& scores, const std::vector<int>& labels, int k) {
    return topk_accuracy(scores, labels, k);
  });
  m.def("mean_average_precision", [](const Mat& scores, const std::vector<std::vector<int>>& sets) {
    return mean_average_precision(scores, sets);
  });
  m.def(
      "evaluate", [](const EmbeddingDataset& ds, const ModelParams& p, int threads) { return report_dict(evaluate(ds, p, threads)); },
      py::arg("dataset"), py::arg("params"), py::arg("threads") = 1);
  m.def(
      "evaluate_mean_pool", [](const EmbeddingDataset& ds) { return report_dict(evaluate_mean_pool(ds)); },
      py::arg("dataset"));

  m.def("_train", [](const EmbeddingDataset& ds, const std::string& cfg, std::uint64_t seed) {
    py::gil_scoped_release release;
    auto r = train(ds, train_config_from_json(cfg), seed);
    std::vector<std::tuple<int, double, double, double, double>> history;
    for (const auto& h : r.history) history.emplace_back(h.epoch, h.loss_t2v, h.loss_v2t, h.total, h.train_top1);
    return std::make_pair(r.params, history);
  });

  m.def(
      "grad_check",
      [](std::uint64_t seed, const std::string& variant, std::size_t samples) {
        auto f = make_grad_fixture(seed);
        f.params.options.variant = parse_variant(variant);
        std::vector<int> all(f.ds.videos.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        GradCheckOptions o;
        o.samples = samples;
        o.seed = seed;
        const auto r = grad_check(make_batch(f.ds, all), f.ds.classes, f.params, o);
        py::dict d;
        d["max_relative_error"] = r.max_relative_error;
        d["coordinates"] = r.coordinates;
        d["worst_tensor"] = r.worst_tensor;
        return d;
      },
      py::arg("seed") = 0, py::arg("variant") = "full", py::arg("samples") = 256);
}
