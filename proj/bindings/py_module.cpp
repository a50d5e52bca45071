#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "incfsl/adaptation.hpp"
#include "incfsl/baselines.hpp"
#include "incfsl/dataset_io.hpp"
#include "incfsl/evaluation.hpp"
#include "incfsl/experiment.hpp"
#include "incfsl/model.hpp"
#include "incfsl/refinement.hpp"
#include "incfsl/rng.hpp"
#include "incfsl/sampler.hpp"
#include "incfsl/training.hpp"

namespace py = pybind11;
using namespace incfsl;

namespace {

Mat episode_matrix(const std::vector<LabeledExample>& examples) { return stack_inputs(examples); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "semi-supervised incremental few-shot learning: core operations";

  // ---- core types -----------------------------------------------------------
  py::enum_<EpisodeMode>(m, "EpisodeMode")
      .value("inductive", EpisodeMode::Inductive)
      .value("transductive", EpisodeMode::Transductive)
      .value("semi_supervised", EpisodeMode::SemiSupervised);

  py::enum_<EvalSplit>(m, "EvalSplit")
      .value("train", EvalSplit::Train)
      .value("val", EvalSplit::Val)
      .value("test", EvalSplit::Test);

  py::class_<EpisodeSpec>(m, "EpisodeSpec")
      .def(py::init<>())
      .def_readwrite("n_way", &EpisodeSpec::n_way)
      .def_readwrite("k_shot", &EpisodeSpec::k_shot)
      .def_readwrite("n_query_novel", &EpisodeSpec::n_query_novel)
      .def_readwrite("n_query_base", &EpisodeSpec::n_query_base)
      .def_readwrite("n_unlabeled_novel", &EpisodeSpec::n_unlabeled_novel)
      .def_readwrite("n_unlabeled_base", &EpisodeSpec::n_unlabeled_base)
      .def_readwrite("mode", &EpisodeSpec::mode)
      .def_readwrite("seed", &EpisodeSpec::seed);

  py::class_<DatasetBundle>(m, "DatasetBundle")
      .def_readonly("dim", &DatasetBundle::dim)
      .def_readonly("base_classes", &DatasetBundle::base_classes)
      .def_readonly("novel_classes", &DatasetBundle::novel_classes)
      .def("split_size",
           [](const DatasetBundle& b, const std::string& name) {
             for (Split s : {Split::BaseTrain, Split::BaseVal, Split::BaseTest,
                             Split::NovelTrain, Split::NovelVal, Split::NovelTest})
               if (name == split_name(s)) return b.split(s).size();
             throw std::invalid_argument("unknown split: " + name);
           })
      .def("validate", &validate_bundle);

  py::class_<Episode>(m, "Episode")
      .def_readonly("spec", &Episode::spec)
      .def_readonly("n_base", &Episode::n_base)
      .def_readonly("index", &Episode::index)
      .def_readonly("label_map", &Episode::label_map)
      .def_property_readonly(
          "support_inputs", [](const Episode& e) { return episode_matrix(e.support); })
      .def_property_readonly("support_labels",
                             [](const Episode& e) { return labels_of(e.support); })
      .def_property_readonly("query_inputs",
                             [](const Episode& e) { return episode_matrix(e.query); })
      .def_property_readonly("query_labels", [](const Episode& e) { return labels_of(e.query); })
      .def_property_readonly(
          "unlabeled_inputs",
          [](const Episode& e) { return stack_inputs(e.unlabeled.features()); })
      .def_property_readonly("n_unlabeled", [](const Episode& e) { return e.unlabeled.size(); })
      .def("serialize", &serialize_episode);

  py::class_<ClassifierWeights>(m, "ClassifierWeights")
      .def_readonly("base", &ClassifierWeights::base)
      .def_readonly("novel", &ClassifierWeights::novel)
      .def("joint", &ClassifierWeights::joint);

  py::class_<SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("spec", &SamplerConfig::spec)
      .def_readwrite("unlabeled_ratio", &SamplerConfig::unlabeled_ratio)
      .def_readwrite("stream_seed", &SamplerConfig::stream_seed)
      .def_readwrite("eval_split", &SamplerConfig::eval_split);

  // ---- model ----------------------------------------------------------------
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &ModelConfig::input_dim)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("gamma_init", &ModelConfig::gamma_init);

  py::class_<ModelState>(m, "ModelState")
      .def_readonly("config", &ModelState::config)
      .def_readwrite("scale_gamma", &ModelState::scale_gamma)
      .def_property_readonly("d", &ModelState::d)
      .def("parameter",
           [](const ModelState& s, const std::string& name) { return s.theta.at(name); })
      .def_property_readonly("parameter_names", [](const ModelState& s) {
        std::vector<std::string> names;
        for (const auto& [k, _] : s.theta) names.push_back(k);
        return names;
      });

  m.def("init_model", &init_model, py::arg("config"), py::arg("seed"));
  m.def("extract_features", &extract_features, py::arg("state"), py::arg("inputs"));
  m.def(
      "cosine_classify",
      [](const Mat& features, const Mat& weights, double gamma) {
        return cosine_classify(features, weights, gamma).probs;
      },
      py::arg("features"), py::arg("weights"), py::arg("gamma"));
  m.def("compute_prototypes", &compute_prototypes, py::arg("support_features"),
        py::arg("support_labels"), py::arg("n_base"), py::arg("n_way"));
  m.def(
      "build_joint_weights",
      [](const Mat& base, const Mat& novel) { return build_joint_weights(base, novel); },
      py::arg("base"), py::arg("novel"));
  m.def(
      "relabel_map",
      [](const std::vector<int>& original_ids, int n_base) {
        std::vector<LabeledExample> raw;
        raw.reserve(original_ids.size());
        for (int id : original_ids) raw.push_back({Vec::Zero(1), id});
        return relabel_novel(raw, n_base).second;
      },
      py::arg("original_ids"), py::arg("n_base"),
      "episode label map for a set of original novel class ids");

  // ---- sampling ---------------------------------------------------------------
  m.def("synthesize_dataset", &synthesize_dataset, py::arg("spec"), py::arg("seed"));
  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("n_base_classes", &SyntheticSpec::n_base_classes)
      .def_readwrite("n_novel_classes", &SyntheticSpec::n_novel_classes)
      .def_readwrite("input_dim", &SyntheticSpec::input_dim)
      .def_readwrite("base_train_per_class", &SyntheticSpec::base_train_per_class)
      .def_readwrite("base_val_per_class", &SyntheticSpec::base_val_per_class)
      .def_readwrite("base_test_per_class", &SyntheticSpec::base_test_per_class)
      .def_readwrite("novel_train_per_class", &SyntheticSpec::novel_train_per_class)
      .def_readwrite("novel_val_per_class", &SyntheticSpec::novel_val_per_class)
      .def_readwrite("novel_test_per_class", &SyntheticSpec::novel_test_per_class)
      .def_readwrite("cluster_sigma", &SyntheticSpec::cluster_sigma)
      .def_readwrite("confusability", &SyntheticSpec::confusability);

  m.def("sample_incremental_episode", &sample_incremental_episode, py::arg("bundle"),
        py::arg("config"), py::arg("index"));
  m.def("sample_fake_unlabeled_episode", &sample_fake_unlabeled_episode, py::arg("bundle"),
        py::arg("config"), py::arg("index"));
  m.def("sample_test_episode", &sample_test_episode, py::arg("bundle"), py::arg("config"),
        py::arg("index"));
  m.def("save_bundle", &save_bundle, py::arg("path"), py::arg("bundle"));
  m.def("load_bundle", &load_bundle, py::arg("path"));

  // ---- refinement -------------------------------------------------------------
  py::class_<RefinementConfig>(m, "RefinementConfig")
      .def(py::init<>())
      .def_readwrite("n_steps", &RefinementConfig::n_steps)
      .def_readwrite("alpha", &RefinementConfig::alpha);

  m.def(
      "slice_novel_predictions",
      [](const Mat& preds, int n_base) {
        PredictionMatrix p;
        p.probs = preds;
        return slice_novel_predictions(p, n_base);
      },
      py::arg("preds"), py::arg("n_base"));
  m.def("reestimate_prototypes", &reestimate_prototypes, py::arg("y_novel"),
        py::arg("unlabeled_features"), py::arg("support_features"), py::arg("support_labels"),
        py::arg("n_base"));
  m.def("ema_update", &ema_update, py::arg("p_old"), py::arg("p_new"), py::arg("alpha"));
  m.def(
      "refine_loop",
      [](const ModelState& state, const ClassifierWeights& weights, const Episode& episode,
         const RefinementConfig& cfg) {
        const RefineResult r = refine_loop(state, weights, episode, cfg);
        return py::make_tuple(r.weights, r.empty_unlabeled);
      },
      py::arg("state"), py::arg("weights"), py::arg("episode"), py::arg("config"));

  // ---- losses -------------------------------------------------------------------
  m.def(
      "cross_entropy_loss",
      [](const Mat& preds, const std::vector<int>& label_cols) {
        PredictionMatrix p;
        p.probs = preds;
        return cross_entropy_loss(p, label_cols);
      },
      py::arg("preds"), py::arg("label_columns"));
  m.def("contrastive_loss", &contrastive_loss, py::arg("view_features"), py::arg("pairing"),
        py::arg("tau1"));

  // ---- evaluation -----------------------------------------------------------------
  py::class_<EpisodeMetrics>(m, "EpisodeMetrics")
      .def_readonly("acc_all_all", &EpisodeMetrics::acc_all_all)
      .def_readonly("acc_b_all", &EpisodeMetrics::acc_b_all)
      .def_readonly("acc_n_all", &EpisodeMetrics::acc_n_all)
      .def_readonly("acc_b_b", &EpisodeMetrics::acc_b_b)
      .def_readonly("acc_n_n", &EpisodeMetrics::acc_n_n)
      .def_readonly("delta_b", &EpisodeMetrics::delta_b)
      .def_readonly("delta_n", &EpisodeMetrics::delta_n)
      .def_readonly("delta", &EpisodeMetrics::delta);

  m.def("metrics_from_accuracies", &metrics_from_accuracies, py::arg("acc_b_all"),
        py::arg("acc_n_all"), py::arg("acc_b_b"), py::arg("acc_n_n"));

  py::class_<AggregateField>(m, "AggregateField")
      .def_readonly("mean", &AggregateField::mean)
      .def_readonly("ci_half", &AggregateField::ci_half);

  py::class_<AggregateReport>(m, "AggregateReport")
      .def_readonly("episodes", &AggregateReport::episodes)
      .def("field_mean", [](const AggregateReport& r, int i) { return r.fields.at(i).mean; })
      .def("field_ci", [](const AggregateReport& r, int i) { return r.fields.at(i).ci_half; });

  m.def("aggregate", &aggregate, py::arg("metrics"));
  m.def("evaluate_episode_with", &evaluate_episode_with, py::arg("state"), py::arg("weights"),
        py::arg("episode"));

  // ---- training and adaptation -----------------------------------------------------
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("eta1", &TrainConfig::eta1)
      .def_readwrite("eta2", &TrainConfig::eta2)
      .def_readwrite("pretrain_steps", &TrainConfig::pretrain_steps)
      .def_readwrite("pretrain_batch", &TrainConfig::pretrain_batch)
      .def_readwrite("meta_steps", &TrainConfig::meta_steps)
      .def_readwrite("episode", &TrainConfig::episode)
      .def_readwrite("refinement", &TrainConfig::refinement)
      .def_readwrite("grad_through_refinement", &TrainConfig::grad_through_refinement)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("init_seed", &TrainConfig::init_seed);

  m.def(
      "pretrain",
      [](const DatasetBundle& bundle, const ModelConfig& mc, const TrainConfig& tc) {
        PretrainResult r = pretrain(bundle, mc, tc);
        return py::make_tuple(r.state, r.w_base, r.loss_trajectory);
      },
      py::arg("bundle"), py::arg("model_config"), py::arg("train_config"));
  m.def(
      "meta_train",
      [](const ModelState& start, const Mat& w_base, const DatasetBundle& bundle,
         const TrainConfig& tc, const std::string& algorithm) {
        const MetaAlgorithm alg =
            algorithm == "alg2" ? MetaAlgorithm::FakeUnlabeled : MetaAlgorithm::Episodic;
        MetaTrainResult r = meta_train(start, w_base, bundle, tc, alg);
        return py::make_tuple(r.state, r.w_base, r.loss_trajectory);
      },
      py::arg("state"), py::arg("w_base"), py::arg("bundle"), py::arg("train_config"),
      py::arg("algorithm"));

  py::class_<AdaptationConfig>(m, "AdaptationConfig")
      .def(py::init<>())
      .def_readwrite("w_cls", &AdaptationConfig::w_cls)
      .def_readwrite("w_ctr", &AdaptationConfig::w_ctr)
      .def_readwrite("w_dst", &AdaptationConfig::w_dst)
      .def_readwrite("tau1", &AdaptationConfig::tau1)
      .def_readwrite("tau2", &AdaptationConfig::tau2)
      .def_readwrite("batch", &AdaptationConfig::batch)
      .def_readwrite("steps", &AdaptationConfig::steps)
      .def_readwrite("lr", &AdaptationConfig::lr);

  m.def(
      "adapt_model",
      [](const ModelState& state, const Mat& w_base, const Episode& episode,
         const AdaptationConfig& cfg, uint64_t seed) {
        AdaptResult r = adapt_model(state, w_base, episode, cfg, seed);
        return py::make_tuple(r.state, r.w_base, r.fell_back);
      },
      py::arg("state"), py::arg("w_base"), py::arg("episode"), py::arg("config"),
      py::arg("stream_seed"));

  // ---- experiment pipeline ------------------------------------------------------
  m.def("default_config_json", []() { return config_to_json(default_config()); });
  m.def(
      "run_pipeline_from_file",
      [](const std::string& config_path) { run_pipeline(load_config(config_path)); },
      py::arg("config_path"));

  m.attr("__version__") = "0.1.0";
}
