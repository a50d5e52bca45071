#pragma once

#include <optional>
#include <string>
#include <vector>

#include "incfsl/adaptation.hpp"
#include "incfsl/baselines.hpp"
#include "incfsl/core_types.hpp"
#include "incfsl/evaluation.hpp"
#include "incfsl/model.hpp"
#include "incfsl/training.hpp"

namespace incfsl {

// ============================================================================
// Synthetic benchmark
// ============================================================================

// Gaussian class clusters on the unit sphere. A `confusability` fraction of
// the novel cluster centers is planted within 2*cluster_sigma of some base
// center; the rest are rejection-sampled away from every base center.
struct SyntheticSpec {
  int n_base_classes = 20;
  int n_novel_classes = 10;  // per novel split; splits carry disjoint classes
  int input_dim = 16;
  int base_train_per_class = 100;
  int base_val_per_class = 30;
  int base_test_per_class = 60;
  int novel_train_per_class = 80;
  int novel_val_per_class = 80;
  int novel_test_per_class = 80;
  double cluster_sigma = 0.18;
  double confusability = 0.5;  // kappa in [0, 1]

  void validate() const;
};

DatasetBundle synthesize_dataset(const SyntheticSpec& spec, uint64_t seed);

// ============================================================================
// Experiment configuration
// ============================================================================

struct EvaluationConfig {
  int episodes = 600;
  uint64_t stream_seed = 1234;
  EpisodeMode mode = EpisodeMode::SemiSupervised;
  std::vector<std::pair<int, int>> ratios = {{3, 1}, {1, 1}, {1, 3}};
  int workers = 4;
  EvalSplit split = EvalSplit::Test;
};

struct ExperimentConfig {
  SyntheticSpec synthetic;
  uint64_t dataset_seed = 7;
  std::string bundle_path;  // non-empty: load this bundle instead of synthesizing
  ModelConfig model;
  EpisodeSpec episode;  // shared template for meta-training and evaluation
  TrainConfig train;
  RefinementConfig test_refinement;
  AdaptationConfig adaptation;
  GraphConfig graph;
  FixMatchConfig fixmatch;
  EvaluationConfig evaluation;
  std::string output_dir = "runs/default";

  void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

// Content hash over the full config (output_dir excluded). Stamped into every
// results artifact.
std::string config_hash(const ExperimentConfig& cfg);
// Hash over the sections that determine a checkpoint (dataset, model, episode
// template, training); evaluate refuses checkpoints with a different value.
std::string pipeline_hash(const ExperimentConfig& cfg);

uint64_t fnv1a64(const std::string& data);

// ============================================================================
// Methods under evaluation
// ============================================================================

enum class Method {
  Baseline,       // episodic meta-training, no use of U
  PlainPR,        // + test-time prototype refinement
  FakeUnlabeled,  // meta-trained with fake unlabeled episodes, + refinement
  FullAdapt,      // + test-time model adaptation before refinement
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);
// Which meta-training run the method evaluates.
MetaAlgorithm method_algorithm(Method m);

// Scores one evaluation episode under `method`, starting from the meta-trained
// (state, w_base).
EpisodeMetrics evaluate_method_episode(Method method, const ModelState& state, const Mat& w_base,
                                       const Episode& episode, const ExperimentConfig& cfg);

struct EvaluateOutcome {
  std::vector<EpisodeMetrics> per_episode;
  AggregateReport report;
};

// Fans episodes out over a worker pool; per-episode results merge by index.
EvaluateOutcome run_method_evaluation(Method method, const ModelState& state, const Mat& w_base,
                                      const DatasetBundle& bundle, const ExperimentConfig& cfg,
                                      EpisodeMode mode,
                                      std::optional<std::pair<int, int>> ratio = std::nullopt);

// ============================================================================
// Pipeline stages (artifacts land in cfg.output_dir)
// ============================================================================

DatasetBundle load_or_synthesize(const ExperimentConfig& cfg);

void run_synth(const ExperimentConfig& cfg);
void run_pretrain(const ExperimentConfig& cfg);
void run_metatrain(const ExperimentConfig& cfg, MetaAlgorithm alg);
void run_evaluate(const ExperimentConfig& cfg, EpisodeMode mode, Method method);
void run_ablate(const ExperimentConfig& cfg);
void run_sweep(const ExperimentConfig& cfg);
void run_report(const ExperimentConfig& cfg);

// All stages in order: synth, pretrain, both meta-training runs, evaluation of
// every method at the configured mode, ablation, sweep, report.
void run_pipeline(const ExperimentConfig& cfg);

// Results-file writer/reader (delimited text; see docs/FORMATS.md).
void write_results_file(const std::string& path, const std::string& method,
                        const std::string& mode, const ExperimentConfig& cfg,
                        const std::vector<EpisodeMetrics>& per_episode,
                        const AggregateReport& report);
struct ResultsFile {
  std::string method, mode, config_hash;
  uint64_t stream_seed = 0;
  std::vector<EpisodeMetrics> per_episode;
};
ResultsFile read_results_file(const std::string& path);

}  // namespace incfsl
