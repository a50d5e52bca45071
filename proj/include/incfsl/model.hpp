#pragma once

#include <map>
#include <string>
#include <vector>

#include "incfsl/autodiff.hpp"
#include "incfsl/core_types.hpp"

namespace incfsl {

// ============================================================================
// Feature extractor
// ============================================================================

// Multilayer perceptron with tanh hidden layers and a linear output layer.
// An empty hidden list means the identity map: features are the raw inputs
// and the extractor carries no parameters.
struct ModelConfig {
  int input_dim = 16;
  std::vector<int> hidden = {64, 64};
  int feature_dim = 16;
  double gamma_init = 10.0;

  bool identity() const { return hidden.empty(); }
  int output_dim() const { return identity() ? input_dim : feature_dim; }
  int n_layers() const { return identity() ? 0 : static_cast<int>(hidden.size()) + 1; }
};

struct ModelState {
  ModelConfig config;
  std::map<std::string, Mat> theta;  // "layer<i>.weight" (in x out), "layer<i>.bias" (1 x out)
  double scale_gamma = 10.0;

  int d() const { return config.output_dim(); }
  bool all_finite() const;
};

ModelState init_model(const ModelConfig& config, uint64_t seed);

// Forward pass in evaluation mode: inputs are one example per row.
Mat extract_features(const ModelState& state, const Mat& inputs);

// ============================================================================
// Cosine classifier head
// ============================================================================

// Row-stochastic softmax of gamma * cos(feature, weight column).
PredictionMatrix cosine_classify(const Mat& features, const Mat& weights, double gamma);
PredictionMatrix cosine_classify(const Mat& features, const ClassifierWeights& weights,
                                 double gamma);

// gamma * cosine similarity matrix, with vector norms floored at `eps`.
Mat cosine_logits(const Mat& features, const Mat& weights, double gamma, double eps = 1e-12);

Mat softmax_rows(const Mat& logits);

// Column j = mean feature of support examples with episode label n_base+1+j.
// Labels are episode labels; every one of the n_way classes must be non-empty.
Mat compute_prototypes(const Mat& support_features, const std::vector<int>& support_labels,
                       int n_base, int n_way);

// 0/1 membership matrix H (n_s x N): H(k, j) = 1 iff support row k has episode
// label n_base+1+j. normalized=true divides each column by the class count.
Mat support_membership(const std::vector<int>& support_labels, int n_base, int n_way,
                       bool normalized);

// ============================================================================
// Tape bridge for training paths
// ============================================================================

struct ModelParams {
  std::map<std::string, ad::Value> theta;
  ad::Value gamma;  // 1x1
};

ModelParams register_model_params(ad::Tape& tape, const ModelState& state);

// Forward pass on the tape; `inputs` enters as a constant.
ad::Value forward_features(ad::Tape& tape, const ModelParams& params, const ModelConfig& config,
                           const Mat& inputs);

// gamma * cosine similarities between feature rows and weight columns.
ad::Value cosine_logits_ad(ad::Tape& tape, ad::Value features, ad::Value weights,
                           ad::Value gamma);

// Prototype matrix (d x N) from support features on the tape.
ad::Value prototypes_ad(ad::Tape& tape, ad::Value support_features,
                        const std::vector<int>& support_labels, int n_base, int n_way);

// Mean over rows of -log(max(P(i, col[i]), eps)).
ad::Value nll_from_probs_ad(ad::Tape& tape, ad::Value probs, const std::vector<int>& label_cols,
                            double eps = 1e-12);

// ============================================================================
// Checkpoints
// ============================================================================

struct Checkpoint {
  ModelState state;
  Mat w_base;
  std::string config_hash;
};

void save_checkpoint(const std::string& path, const ModelState& state, const Mat& w_base,
                     const std::string& config_hash);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace incfsl
