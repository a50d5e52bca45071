#pragma once

#include "incfsl/core_types.hpp"
#include "incfsl/model.hpp"

namespace incfsl {

struct RefinementConfig {
  int n_steps = 1;
  double alpha = 1.0;  // in (0, 1]

  void validate() const {
    if (n_steps < 1) throw ConfigError("RefinementConfig: n_steps must be >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw ConfigError("RefinementConfig: alpha must lie in (0, 1]");
  }
};

// Novel-class columns of a joint prediction matrix. Rows are NOT renormalized;
// mass assigned to base classes simply drops out, which is the filtering step.
Mat slice_novel_predictions(const PredictionMatrix& preds, int n_base);

// Soft re-estimation: column j = (sum_i y(i,j) f_u(i) + sum_{S_j} f_s(k)) /
// (sum_i y(i,j) + |S_j|). support_labels are episode labels.
Mat reestimate_prototypes(const Mat& y_novel, const Mat& unlabeled_features,
                          const Mat& support_features, const std::vector<int>& support_labels,
                          int n_base);

// alpha * p_new + (1 - alpha) * p_old, elementwise.
Mat ema_update(const Mat& p_old, const Mat& p_new, double alpha);

struct RefineResult {
  ClassifierWeights weights;
  bool empty_unlabeled = false;  // U was empty; weights returned unchanged
};

// n_steps rounds of {classify U with the current joint weights -> slice ->
// re-estimate -> EMA}. Base columns are returned untouched.
RefineResult refine_loop(const ModelState& state, const ClassifierWeights& weights,
                         const Episode& episode, const RefinementConfig& cfg);

// Tape counterpart used inside meta-training: returns the refined novel weight
// matrix (d x N) with gradients flowing through the whole chain, or through
// everything except the pseudo-label weights when stop_gradient_pseudo is set.
ad::Value refine_novel_weights_ad(ad::Tape& tape, ad::Value w_base, ad::Value novel_weights,
                                  ad::Value support_features,
                                  const std::vector<int>& support_labels,
                                  ad::Value unlabeled_features, ad::Value gamma, int n_base,
                                  int n_way, const RefinementConfig& cfg,
                                  bool stop_gradient_pseudo = false);

}  // namespace incfsl
