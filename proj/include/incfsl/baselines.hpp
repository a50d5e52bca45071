#pragma once

#include "incfsl/adaptation.hpp"
#include "incfsl/core_types.hpp"
#include "incfsl/evaluation.hpp"
#include "incfsl/model.hpp"
#include "incfsl/refinement.hpp"

namespace incfsl {

// ============================================================================
// Label propagation over a class-weight graph
// ============================================================================

struct GraphConfig {
  double sigma = 1.0;    // kernel bandwidth on cosine distance
  double lambda = 0.9;   // spreading damping, in (0, 1)
  int iterations = 20;

  void validate() const {
    if (sigma <= 0.0) throw ConfigError("GraphConfig: sigma must be > 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("GraphConfig: lambda in (0, 1)");
    if (iterations < 1) throw ConfigError("GraphConfig: iterations must be >= 1");
  }
};

struct LabelPropagationResult {
  PredictionMatrix preds;  // one row per query
  int fallback_rows = 0;   // disconnected queries answered by direct cosine
};

// Vertices: every classifier weight column (labeled with its class), then the
// unlabeled features, then the queries. Edges carry a Gaussian kernel on
// cosine distance; damped spreading F <- lambda*S*F + (1-lambda)*F0 runs from
// the one-step assignment F0 = S*Y0.
LabelPropagationResult label_propagation_predict(const ClassifierWeights& weights,
                                                 const Mat& unlabeled_features,
                                                 const Mat& query_features,
                                                 const GraphConfig& cfg);

// ============================================================================
// FixMatch-style consistency adaptation
// ============================================================================

struct FixMatchConfig {
  double threshold = 0.95;        // pseudo-label confidence gate, in (0, 1]
  double consistency_weight = 1.0;
  int steps = 20;
  int batch = 64;
  double lr = 1e-3;
  AugmentationSpec weak{0.0, 0.0};
  AugmentationSpec strong{0.2, 0.2};

  void validate() const {
    if (!(threshold > 0.0 && threshold <= 1.0))
      throw ConfigError("FixMatchConfig: threshold in (0, 1]");
    if (consistency_weight < 0.0) throw ConfigError("FixMatchConfig: negative weight");
    if (steps < 0 || batch < 1 || lr < 0.0) throw ConfigError("FixMatchConfig: bad values");
  }
};

struct FixMatchResult {
  ModelState state;
  Mat w_base;
  int confident_total = 0;  // pseudo-labeled example count over all steps
  std::vector<double> loss_trajectory;
};

// Per step: weak-view predictions against [W_b, prototypes(S)]; samples whose
// max probability clears the threshold get their argmax as a pseudo-label and
// a cross-entropy term on the strong view; plus supervised loss on S.
FixMatchResult fixmatch_adapt(const ModelState& state, const Mat& w_base, const Episode& episode,
                              const FixMatchConfig& cfg, uint64_t stream_seed);

// ============================================================================
// Plain prototype refinement on an episodically trained model
// ============================================================================

// Test-time-only refinement followed by standard scoring.
EpisodeMetrics run_plain_pr(const ModelState& state, const Mat& w_base, const Episode& episode,
                            const RefinementConfig& cfg);

}  // namespace incfsl
