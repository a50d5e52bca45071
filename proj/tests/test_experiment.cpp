#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "incfsl/dataset_io.hpp"
#include "incfsl/experiment.hpp"
#include "testutil.hpp"

using namespace incfsl;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.n_base_classes = 6;
  spec.n_novel_classes = 4;
  spec.input_dim = 8;
  spec.base_train_per_class = 20;
  spec.base_val_per_class = 10;
  spec.base_test_per_class = 15;
  spec.novel_train_per_class = 15;
  spec.novel_val_per_class = 15;
  spec.novel_test_per_class = 15;
  return spec;
}

bool bundles_equal(const DatasetBundle& a, const DatasetBundle& b) {
  if (a.dim != b.dim || a.base_classes != b.base_classes || a.novel_classes != b.novel_classes)
    return false;
  for (Split s : {Split::BaseTrain, Split::BaseVal, Split::BaseTest, Split::NovelTrain,
                  Split::NovelVal, Split::NovelTest}) {
    const auto& sa = a.split(s);
    const auto& sb = b.split(s);
    if (sa.size() != sb.size()) return false;
    for (size_t i = 0; i < sa.size(); ++i)
      if (sa[i].label != sb[i].label || sa[i].features != sb[i].features) return false;
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("synthesis is deterministic in (spec, seed)") {
  const SyntheticSpec spec = small_spec();
  CHECK(bundles_equal(synthesize_dataset(spec, 5), synthesize_dataset(spec, 5)));
  CHECK(!bundles_equal(synthesize_dataset(spec, 5), synthesize_dataset(spec, 6)));
}

TEST_CASE("synthesized bundles satisfy the split invariants") {
  const DatasetBundle b = synthesize_dataset(small_spec(), 9);
  CHECK(validate_bundle(b).empty());
  CHECK(b.base_classes.size() == 6);
  CHECK(b.novel_classes.size() == 12);  // 4 per split, disjoint
}

TEST_CASE("confusability 1 places every novel center within 2 sigma of a base center") {
  SyntheticSpec spec = small_spec();
  spec.confusability = 1.0;
  spec.cluster_sigma = 0.1;
  const DatasetBundle b = synthesize_dataset(spec, 11);

  // Base centers recovered as class means of the train split (law of large
  // numbers at sigma 0.1 over 20 points keeps the error well under sigma).
  std::map<int, Vec> base_centers;
  std::map<int, int> counts;
  for (const auto& ex : b.base_train) {
    if (!base_centers.count(ex.label)) base_centers[ex.label] = Vec::Zero(b.dim);
    base_centers[ex.label] += ex.features;
    counts[ex.label]++;
  }
  for (auto& [id, c] : base_centers) c /= counts[id];

  std::map<int, Vec> novel_centers;
  std::map<int, int> novel_counts;
  for (const auto& ex : b.novel_test) {
    if (!novel_centers.count(ex.label)) novel_centers[ex.label] = Vec::Zero(b.dim);
    novel_centers[ex.label] += ex.features;
    novel_counts[ex.label]++;
  }
  for (auto& [id, c] : novel_centers) {
    c /= novel_counts[id];
    double best = 1e9;
    for (const auto& [bid, bc] : base_centers) best = std::min(best, (c - bc).norm());
    CHECK(best < 2.0 * spec.cluster_sigma + 0.15);  // estimation slack
  }
}

TEST_CASE("confusability 0 with small spread is pairwise linearly separable") {
  SyntheticSpec spec = small_spec();
  spec.confusability = 0.0;
  spec.cluster_sigma = 0.05;
  const DatasetBundle b = synthesize_dataset(spec, 13);

  std::map<int, std::vector<const LabeledExample*>> by_class;
  for (const auto& ex : b.base_test) by_class[ex.label].push_back(&ex);
  std::map<int, std::vector<const LabeledExample*>> novel_by_class;
  for (const auto& ex : b.novel_test) novel_by_class[ex.label].push_back(&ex);

  auto mean_of = [&](const std::vector<const LabeledExample*>& xs) {
    Vec m = Vec::Zero(b.dim);
    for (const auto* e : xs) m += e->features;
    return (m / static_cast<double>(xs.size())).eval();
  };

  // Midpoint hyperplane between every base/novel cluster pair.
  for (const auto& [bid, bxs] : by_class) {
    const Vec cb = mean_of(bxs);
    for (const auto& [nid, nxs] : novel_by_class) {
      const Vec cn = mean_of(nxs);
      const Vec normal = cb - cn;
      const double offset = normal.dot(0.5 * (cb + cn));
      int correct = 0, total = 0;
      for (const auto* e : bxs) {
        ++total;
        if (normal.dot(e->features) > offset) ++correct;
      }
      for (const auto* e : nxs) {
        ++total;
        if (normal.dot(e->features) < offset) ++correct;
      }
      CHECK(static_cast<double>(correct) / total >= 0.99);
    }
  }
}

TEST_CASE("bundle container round trip is exact") {
  const DatasetBundle b = synthesize_dataset(small_spec(), 17);
  const std::string path = "test_bundle_roundtrip.bin";
  save_bundle(path, b);
  const DatasetBundle loaded = load_bundle(path);
  fs::remove(path);
  CHECK(bundles_equal(b, loaded));
}

TEST_CASE("config JSON round trip preserves the hash") {
  ExperimentConfig cfg = default_config();
  cfg.evaluation.episodes = 42;
  cfg.adaptation.tau1 = 0.37;
  const std::string text = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.evaluation.episodes == 42);
  CHECK(back.adaptation.tau1 == 0.37);
}

TEST_CASE("config hash ignores the output dir but tracks content") {
  ExperimentConfig a = default_config();
  ExperimentConfig b = default_config();
  b.output_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.train.eta1 = 0.123;
  CHECK(config_hash(a) != config_hash(b));

  // The pipeline hash tracks training-relevant sections only.
  ExperimentConfig c = default_config();
  c.evaluation.episodes = 7;
  CHECK(pipeline_hash(c) == pipeline_hash(a));
  c.model.hidden = {3};
  CHECK(pipeline_hash(c) != pipeline_hash(a));
}

TEST_CASE("results file writer and reader round trip") {
  ExperimentConfig cfg = default_config();
  cfg.output_dir = "test_results_dir";
  std::vector<EpisodeMetrics> eps;
  CounterRng rng(19, 0, Draw::SampleNoise);
  for (int i = 0; i < 5; ++i)
    eps.push_back(metrics_from_accuracies(rng.next_double(), rng.next_double(),
                                          rng.next_double(), rng.next_double()));
  const AggregateReport report = aggregate(eps);

  fs::create_directories(cfg.output_dir);
  const std::string path = cfg.output_dir + "/results_test.tsv";
  write_results_file(path, "pr", "semi_supervised", cfg, eps, report);
  const std::string first = slurp(path);
  write_results_file(path, "pr", "semi_supervised", cfg, eps, report);
  CHECK(slurp(path) == first);  // byte-identical rewrite

  const ResultsFile rf = read_results_file(path);
  CHECK(rf.method == "pr");
  CHECK(rf.mode == "semi_supervised");
  CHECK(rf.config_hash == config_hash(cfg));
  REQUIRE(rf.per_episode.size() == eps.size());
  for (size_t i = 0; i < eps.size(); ++i)
    CHECK(rf.per_episode[i].acc_all_all ==
          doctest::Approx(eps[i].acc_all_all).epsilon(1e-7));
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("episode evaluation is identical across worker counts") {
  SyntheticSpec spec = small_spec();
  ExperimentConfig cfg = default_config();
  cfg.synthetic = spec;
  cfg.episode.n_way = 2;
  cfg.episode.k_shot = 1;
  cfg.episode.n_query_novel = 6;
  cfg.episode.n_query_base = 6;
  cfg.episode.n_unlabeled_novel = 8;
  cfg.episode.n_unlabeled_base = 8;
  cfg.evaluation.episodes = 12;
  cfg.adaptation.steps = 3;
  cfg.adaptation.batch = 8;
  const DatasetBundle bundle = synthesize_dataset(spec, 23);

  ModelConfig mc;
  mc.input_dim = 8;
  mc.hidden = {10};
  mc.feature_dim = 6;
  cfg.model = mc;
  const ModelState state = init_model(mc, 29);
  CounterRng rng(30, 0, Draw::SampleNoise);
  const Mat w_base = test::random_matrix(6, 6, rng);

  cfg.evaluation.workers = 1;
  const EvaluateOutcome serial = run_method_evaluation(
      Method::FullAdapt, state, w_base, bundle, cfg, EpisodeMode::SemiSupervised);
  cfg.evaluation.workers = 4;
  const EvaluateOutcome parallel = run_method_evaluation(
      Method::FullAdapt, state, w_base, bundle, cfg, EpisodeMode::SemiSupervised);
  REQUIRE(serial.per_episode.size() == parallel.per_episode.size());
  for (size_t i = 0; i < serial.per_episode.size(); ++i)
    for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f)
      CHECK(serial.per_episode[i].field(f) == parallel.per_episode[i].field(f));
}

TEST_CASE("checkpoints with a foreign pipeline hash are refused") {
  ExperimentConfig cfg = default_config();
  cfg.output_dir = "test_hash_refusal";
  fs::create_directories(cfg.output_dir);
  ModelConfig mc;
  mc.input_dim = cfg.model.input_dim;
  const ModelState state = init_model(cfg.model, 1);
  save_checkpoint(cfg.output_dir + "/alg1.ckpt", state, Mat::Zero(state.d(), 3),
                  "0123456789abcdef");
  CHECK_THROWS_WITH_AS(run_evaluate(cfg, EpisodeMode::Inductive, Method::Baseline),
                       doctest::Contains("refusing to mix"), std::runtime_error);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("method names round trip") {
  for (Method m : {Method::Baseline, Method::PlainPR, Method::FakeUnlabeled, Method::FullAdapt})
    CHECK(method_from_name(method_name(m)) == m);
  CHECK(method_algorithm(Method::PlainPR) == MetaAlgorithm::Episodic);
  CHECK(method_algorithm(Method::FullAdapt) == MetaAlgorithm::FakeUnlabeled);
}
