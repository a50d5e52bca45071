#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace incfsl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ============================================================================
// Errors
// ============================================================================
class SamplingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
class ConfigError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ============================================================================
// Examples and dataset splits
// ============================================================================

// Class ids are dense integers starting at 1; base classes occupy 1..N_b and
// episode-novel classes are relabeled to N_b+1..N_b+N. Column c-1 of any
// prediction or weight matrix corresponds to class id c.
inline int class_to_col(int class_id) { return class_id - 1; }
inline int col_to_class(int col) { return col + 1; }

struct LabeledExample {
  Vec features;
  int label = 0;
};

enum class Split { BaseTrain, BaseVal, BaseTest, NovelTrain, NovelVal, NovelTest };

const char* split_name(Split s);

struct DatasetBundle {
  std::vector<LabeledExample> base_train, base_val, base_test;
  std::vector<LabeledExample> novel_train, novel_val, novel_test;
  std::vector<int> base_classes;   // sorted
  std::vector<int> novel_classes;  // sorted union over the three novel splits
  int dim = 0;

  const std::vector<LabeledExample>& split(Split s) const;
  std::vector<LabeledExample>& split(Split s);
  int n_base_classes() const { return static_cast<int>(base_classes.size()); }
};

// Report-only invariant check; returns one message per violation.
std::vector<std::string> validate_bundle(const DatasetBundle& bundle);

// ============================================================================
// Episodes
// ============================================================================

enum class EpisodeMode { Inductive, Transductive, SemiSupervised };

const char* mode_name(EpisodeMode m);
EpisodeMode mode_from_name(const std::string& name);

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int n_query_novel = 75;
  int n_query_base = 75;
  int n_unlabeled_novel = 0;
  int n_unlabeled_base = 0;
  EpisodeMode mode = EpisodeMode::Inductive;
  uint64_t seed = 0;

  void validate() const;
};

// Unlabeled examples keep their true labels behind an access guard: learning
// code sees features only, while tests may read labels through oracle_label(),
// which bumps a shared counter so leak-free behaviour is checkable.
class UnlabeledSet {
 public:
  UnlabeledSet() : oracle_reads_(std::make_shared<std::atomic<int64_t>>(0)) {}
  UnlabeledSet(std::vector<Vec> feats, std::vector<int> hidden_labels)
      : features_(std::move(feats)),
        hidden_labels_(std::move(hidden_labels)),
        oracle_reads_(std::make_shared<std::atomic<int64_t>>(0)) {
    if (features_.size() != hidden_labels_.size())
      throw ShapeError("UnlabeledSet: features/labels size mismatch");
  }

  size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  const std::vector<Vec>& features() const { return features_; }

  // Oracle view; never call from learning code paths.
  int oracle_label(size_t i) const {
    oracle_reads_->fetch_add(1, std::memory_order_relaxed);
    return hidden_labels_.at(i);
  }
  int64_t oracle_access_count() const { return oracle_reads_->load(std::memory_order_relaxed); }

 private:
  std::vector<Vec> features_;
  std::vector<int> hidden_labels_;  // episode label space
  std::shared_ptr<std::atomic<int64_t>> oracle_reads_;
};

struct SourceRef {
  Split split;
  int index;  // position within the split
};

struct Episode {
  std::vector<LabeledExample> support;  // episode labels N_b+1..N_b+N, K per class
  std::vector<LabeledExample> query;    // base ids 1..N_b and episode labels
  UnlabeledSet unlabeled;
  EpisodeSpec spec;
  std::map<int, int> label_map;  // original novel class id -> episode label
  int n_base = 0;
  uint64_t index = 0;
  bool transductive_aliased = false;  // U is the query set itself

  std::vector<SourceRef> support_src, query_src, unlabeled_src;
};

// ============================================================================
// Classifier weights and predictions
// ============================================================================

struct ClassifierWeights {
  Mat base;   // d x N_b
  Mat novel;  // d x N, may have zero columns

  int d() const { return static_cast<int>(base.rows()); }
  int n_base() const { return static_cast<int>(base.cols()); }
  int n_way() const { return static_cast<int>(novel.cols()); }
  Mat joint() const;
  bool all_finite() const;
};

ClassifierWeights build_joint_weights(const Mat& base, const Mat& novel);

struct PredictionMatrix {
  Mat probs;  // n x C, each row a distribution

  int rows() const { return static_cast<int>(probs.rows()); }
  int cols() const { return static_cast<int>(probs.cols()); }
  bool rows_are_distributions(double tol = 1e-6) const;
};

// ============================================================================
// Operations
// ============================================================================

// Maps the distinct original class ids (sorted ascending) to n_base+1, ... and
// rewrites labels accordingly. expected_ways = 0 skips the way-count check.
std::pair<std::vector<LabeledExample>, std::map<int, int>> relabel_novel(
    const std::vector<LabeledExample>& support_raw, int n_base, int expected_ways = 0);

// Dense matrix helpers used throughout: one example per row.
Mat stack_inputs(const std::vector<LabeledExample>& examples);
Mat stack_inputs(const std::vector<Vec>& vectors);
std::vector<int> labels_of(const std::vector<LabeledExample>& examples);

}  // namespace incfsl
