#include <fstream>
#include <sstream>

#include "incfsl/experiment.hpp"
#include "json.hpp"

namespace incfsl {

using nlohmann::json;

namespace {

json to_json(const SyntheticSpec& s) {
  return json{{"n_base_classes", s.n_base_classes},
              {"n_novel_classes", s.n_novel_classes},
              {"input_dim", s.input_dim},
              {"base_train_per_class", s.base_train_per_class},
              {"base_val_per_class", s.base_val_per_class},
              {"base_test_per_class", s.base_test_per_class},
              {"novel_train_per_class", s.novel_train_per_class},
              {"novel_val_per_class", s.novel_val_per_class},
              {"novel_test_per_class", s.novel_test_per_class},
              {"cluster_sigma", s.cluster_sigma},
              {"confusability", s.confusability}};
}

void from_json(const json& j, SyntheticSpec& s) {
  j.at("n_base_classes").get_to(s.n_base_classes);
  j.at("n_novel_classes").get_to(s.n_novel_classes);
  j.at("input_dim").get_to(s.input_dim);
  j.at("base_train_per_class").get_to(s.base_train_per_class);
  j.at("base_val_per_class").get_to(s.base_val_per_class);
  j.at("base_test_per_class").get_to(s.base_test_per_class);
  j.at("novel_train_per_class").get_to(s.novel_train_per_class);
  j.at("novel_val_per_class").get_to(s.novel_val_per_class);
  j.at("novel_test_per_class").get_to(s.novel_test_per_class);
  j.at("cluster_sigma").get_to(s.cluster_sigma);
  j.at("confusability").get_to(s.confusability);
}

json to_json(const ModelConfig& m) {
  return json{{"input_dim", m.input_dim},
              {"hidden", m.hidden},
              {"feature_dim", m.feature_dim},
              {"gamma_init", m.gamma_init}};
}

void from_json(const json& j, ModelConfig& m) {
  j.at("input_dim").get_to(m.input_dim);
  j.at("hidden").get_to(m.hidden);
  j.at("feature_dim").get_to(m.feature_dim);
  j.at("gamma_init").get_to(m.gamma_init);
}

json to_json(const EpisodeSpec& e) {
  return json{{"n_way", e.n_way},
              {"k_shot", e.k_shot},
              {"n_query_novel", e.n_query_novel},
              {"n_query_base", e.n_query_base},
              {"n_unlabeled_novel", e.n_unlabeled_novel},
              {"n_unlabeled_base", e.n_unlabeled_base},
              {"mode", mode_name(e.mode)}};
}

void from_json(const json& j, EpisodeSpec& e) {
  j.at("n_way").get_to(e.n_way);
  j.at("k_shot").get_to(e.k_shot);
  j.at("n_query_novel").get_to(e.n_query_novel);
  j.at("n_query_base").get_to(e.n_query_base);
  j.at("n_unlabeled_novel").get_to(e.n_unlabeled_novel);
  j.at("n_unlabeled_base").get_to(e.n_unlabeled_base);
  e.mode = mode_from_name(j.at("mode").get<std::string>());
}

json to_json(const RefinementConfig& r) {
  return json{{"n_steps", r.n_steps}, {"alpha", r.alpha}};
}

void from_json(const json& j, RefinementConfig& r) {
  j.at("n_steps").get_to(r.n_steps);
  j.at("alpha").get_to(r.alpha);
}

json to_json(const TrainConfig& t) {
  return json{{"eta1", t.eta1},
              {"eta2", t.eta2},
              {"pretrain_steps", t.pretrain_steps},
              {"pretrain_batch", t.pretrain_batch},
              {"meta_steps", t.meta_steps},
              {"stream_seed", t.episode.stream_seed},
              {"refinement", to_json(t.refinement)},
              {"grad_through_refinement", t.grad_through_refinement},
              {"momentum", t.momentum},
              {"init_seed", t.init_seed}};
}

void from_json(const json& j, TrainConfig& t) {
  j.at("eta1").get_to(t.eta1);
  j.at("eta2").get_to(t.eta2);
  j.at("pretrain_steps").get_to(t.pretrain_steps);
  j.at("pretrain_batch").get_to(t.pretrain_batch);
  j.at("meta_steps").get_to(t.meta_steps);
  j.at("stream_seed").get_to(t.episode.stream_seed);
  from_json(j.at("refinement"), t.refinement);
  j.at("grad_through_refinement").get_to(t.grad_through_refinement);
  j.at("momentum").get_to(t.momentum);
  j.at("init_seed").get_to(t.init_seed);
}

json to_json(const AugmentationSpec& a) {
  return json{{"sigma", a.sigma}, {"mask_rate", a.mask_rate}};
}

void from_json(const json& j, AugmentationSpec& a) {
  j.at("sigma").get_to(a.sigma);
  j.at("mask_rate").get_to(a.mask_rate);
}

json to_json(const AdaptationConfig& a) {
  return json{{"w_cls", a.w_cls},
              {"w_ctr", a.w_ctr},
              {"w_dst", a.w_dst},
              {"tau1", a.tau1},
              {"tau2", a.tau2},
              {"batch", a.batch},
              {"steps", a.steps},
              {"lr", a.lr},
              {"augmentation", to_json(a.augmentation)},
              {"classify_support_all_classes", a.classify_support_all_classes}};
}

void from_json(const json& j, AdaptationConfig& a) {
  j.at("w_cls").get_to(a.w_cls);
  j.at("w_ctr").get_to(a.w_ctr);
  j.at("w_dst").get_to(a.w_dst);
  j.at("tau1").get_to(a.tau1);
  j.at("tau2").get_to(a.tau2);
  j.at("batch").get_to(a.batch);
  j.at("steps").get_to(a.steps);
  j.at("lr").get_to(a.lr);
  from_json(j.at("augmentation"), a.augmentation);
  j.at("classify_support_all_classes").get_to(a.classify_support_all_classes);
}

json to_json(const GraphConfig& g) {
  return json{{"sigma", g.sigma}, {"lambda", g.lambda}, {"iterations", g.iterations}};
}

void from_json(const json& j, GraphConfig& g) {
  j.at("sigma").get_to(g.sigma);
  j.at("lambda").get_to(g.lambda);
  j.at("iterations").get_to(g.iterations);
}

json to_json(const FixMatchConfig& f) {
  return json{{"threshold", f.threshold},
              {"consistency_weight", f.consistency_weight},
              {"steps", f.steps},
              {"batch", f.batch},
              {"lr", f.lr},
              {"weak", to_json(f.weak)},
              {"strong", to_json(f.strong)}};
}

void from_json(const json& j, FixMatchConfig& f) {
  j.at("threshold").get_to(f.threshold);
  j.at("consistency_weight").get_to(f.consistency_weight);
  j.at("steps").get_to(f.steps);
  j.at("batch").get_to(f.batch);
  j.at("lr").get_to(f.lr);
  from_json(j.at("weak"), f.weak);
  from_json(j.at("strong"), f.strong);
}

const char* eval_split_name(EvalSplit s) {
  switch (s) {
    case EvalSplit::Train: return "train";
    case EvalSplit::Val: return "val";
    case EvalSplit::Test: return "test";
  }
  return "?";
}

EvalSplit eval_split_from_name(const std::string& s) {
  if (s == "train") return EvalSplit::Train;
  if (s == "val") return EvalSplit::Val;
  if (s == "test") return EvalSplit::Test;
  throw ConfigError("unknown eval split: " + s);
}

json to_json(const EvaluationConfig& e) {
  json ratios = json::array();
  for (const auto& [b, n] : e.ratios) ratios.push_back(json::array({b, n}));
  return json{{"episodes", e.episodes}, {"stream_seed", e.stream_seed},
              {"mode", mode_name(e.mode)}, {"ratios", ratios},
              {"workers", e.workers},     {"split", eval_split_name(e.split)}};
}

void from_json(const json& j, EvaluationConfig& e) {
  j.at("episodes").get_to(e.episodes);
  j.at("stream_seed").get_to(e.stream_seed);
  e.mode = mode_from_name(j.at("mode").get<std::string>());
  e.ratios.clear();
  for (const auto& r : j.at("ratios"))
    e.ratios.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
  j.at("workers").get_to(e.workers);
  e.split = eval_split_from_name(j.at("split").get<std::string>());
}

}  // namespace

void ExperimentConfig::validate() const {
  synthetic.validate();
  episode.validate();
  train.validate();
  test_refinement.validate();
  adaptation.validate();
  graph.validate();
  fixmatch.validate();
  if (evaluation.episodes < 1) throw ConfigError("evaluation.episodes must be >= 1");
  if (evaluation.workers < 1) throw ConfigError("evaluation.workers must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.episode.n_unlabeled_novel = 150;
  cfg.episode.n_unlabeled_base = 150;
  cfg.episode.mode = EpisodeMode::SemiSupervised;
  cfg.train.episode.stream_seed = 11;
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j{{"dataset",
          {{"synthetic", to_json(cfg.synthetic)},
           {"seed", cfg.dataset_seed},
           {"bundle_path", cfg.bundle_path}}},
         {"model", to_json(cfg.model)},
         {"episode", to_json(cfg.episode)},
         {"train", to_json(cfg.train)},
         {"test_refinement", to_json(cfg.test_refinement)},
         {"adaptation", to_json(cfg.adaptation)},
         {"graph", to_json(cfg.graph)},
         {"fixmatch", to_json(cfg.fixmatch)},
         {"evaluation", to_json(cfg.evaluation)},
         {"output_dir", cfg.output_dir}};
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig cfg;
  const json& ds = j.at("dataset");
  from_json(ds.at("synthetic"), cfg.synthetic);
  ds.at("seed").get_to(cfg.dataset_seed);
  ds.at("bundle_path").get_to(cfg.bundle_path);
  from_json(j.at("model"), cfg.model);
  from_json(j.at("episode"), cfg.episode);
  from_json(j.at("train"), cfg.train);
  from_json(j.at("test_refinement"), cfg.test_refinement);
  from_json(j.at("adaptation"), cfg.adaptation);
  from_json(j.at("graph"), cfg.graph);
  from_json(j.at("fixmatch"), cfg.fixmatch);
  from_json(j.at("evaluation"), cfg.evaluation);
  j.at("output_dir").get_to(cfg.output_dir);
  // The meta-training sampler inherits the shared episode template.
  cfg.train.episode.spec = cfg.episode;
  cfg.train.episode.eval_split = EvalSplit::Train;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return config_from_json(buf.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_config: cannot open " + path);
  os << config_to_json(cfg);
}

uint64_t fnv1a64(const std::string& data) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {
std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}
}  // namespace

std::string config_hash(const ExperimentConfig& cfg) {
  json j = json::parse(config_to_json(cfg));
  j.erase("output_dir");
  return hex64(fnv1a64(j.dump()));
}

std::string pipeline_hash(const ExperimentConfig& cfg) {
  json j = json::parse(config_to_json(cfg));
  json pruned{{"dataset", j.at("dataset")},
              {"model", j.at("model")},
              {"episode", j.at("episode")},
              {"train", j.at("train")}};
  return hex64(fnv1a64(pruned.dump()));
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::PlainPR: return "pr";
    case Method::FakeUnlabeled: return "fake";
    case Method::FullAdapt: return "full";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "baseline") return Method::Baseline;
  if (name == "pr") return Method::PlainPR;
  if (name == "fake") return Method::FakeUnlabeled;
  if (name == "full") return Method::FullAdapt;
  throw ConfigError("unknown method: " + name);
}

MetaAlgorithm method_algorithm(Method m) {
  return (m == Method::Baseline || m == Method::PlainPR) ? MetaAlgorithm::Episodic
                                                         : MetaAlgorithm::FakeUnlabeled;
}

}  // namespace incfsl
