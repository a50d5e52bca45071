#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "incfsl/core_types.hpp"
#include "incfsl/model.hpp"
#include "incfsl/sampler.hpp"

namespace incfsl {

// The five protocol accuracies plus the degradation metrics
//   delta_b = acc_b_all - acc_b_b,  delta_n = acc_n_all - acc_n_n,
//   delta   = (delta_b + delta_n) / 2.
// Accuracies are fractions in [0, 1]; reports render them x100.
struct EpisodeMetrics {
  double acc_all_all = 0.0;
  double acc_b_all = 0.0;
  double acc_n_all = 0.0;
  double acc_b_b = 0.0;
  double acc_n_n = 0.0;
  double delta_b = 0.0;
  double delta_n = 0.0;
  double delta = 0.0;

  static constexpr int kFieldCount = 8;
  static const std::array<const char*, kFieldCount>& field_names();
  double field(int i) const;
};

// Fills the deltas from the four restricted/joint accuracies; the joint
// accuracy is their balanced combination (equal base and novel query counts).
EpisodeMetrics metrics_from_accuracies(double acc_b_all, double acc_n_all, double acc_b_b,
                                       double acc_n_n);

// Argmax scoring of one episode. The three matrices cover the query set in
// order: joint over all N_b+N columns, base-only over W_b columns, novel-only
// over W_n columns. Ties break toward the lowest class index.
EpisodeMetrics score_episode(const PredictionMatrix& preds_joint,
                             const PredictionMatrix& preds_base_only,
                             const PredictionMatrix& preds_novel_only, const Episode& episode);

// First row index of the maximal entry (lowest class on ties).
int argmax_row(const Mat& probs, int row);

struct AggregateField {
  double mean = 0.0;
  double ci_half = 0.0;  // 1.96 * sample stddev / sqrt(E)
};

struct AggregateReport {
  std::array<AggregateField, EpisodeMetrics::kFieldCount> fields;
  int episodes = 0;
  uint64_t stream_seed = 0;
  std::string config_hash;

  const AggregateField& acc_all_all() const { return fields[0]; }
  const AggregateField& delta() const { return fields[7]; }
};

AggregateReport aggregate(const std::vector<EpisodeMetrics>& metrics);

// Classifies the episode's query set with the given model and weights and
// scores it: the standard tail of every evaluation path.
EpisodeMetrics evaluate_episode_with(const ModelState& state, const ClassifierWeights& weights,
                                     const Episode& episode);

// Runs `runner` over the same episode indices for every ratio; delta is the
// joint-accuracy change relative to the equal (1:1) ratio, which is evaluated
// as a reference if absent from `ratios`.
using EpisodeRunner =
    std::function<EpisodeMetrics(const DatasetBundle&, const SamplerConfig&, uint64_t)>;

struct RatioPoint {
  std::pair<int, int> ratio;
  AggregateReport report;
  double joint_acc = 0.0;
  double delta_vs_equal = 0.0;
};

std::vector<RatioPoint> ratio_sweep(const EpisodeRunner& runner, const DatasetBundle& bundle,
                                    const SamplerConfig& base_cfg,
                                    const std::vector<std::pair<int, int>>& ratios, int episodes);

}  // namespace incfsl
