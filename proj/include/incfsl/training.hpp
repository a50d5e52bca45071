#pragma once

#include <functional>
#include <vector>

#include "incfsl/model.hpp"
#include "incfsl/refinement.hpp"
#include "incfsl/sampler.hpp"

namespace incfsl {

struct TrainConfig {
  double eta1 = 1e-2;  // learning rate for theta (and gamma)
  double eta2 = 1e-2;  // learning rate for W_b
  int pretrain_steps = 1500;
  int pretrain_batch = 64;
  int meta_steps = 2000;
  SamplerConfig episode;           // template for meta-training episodes
  RefinementConfig refinement;     // used inside the fake-unlabeled step
  bool grad_through_refinement = true;  // false: stop-gradient on pseudo labels
  double momentum = 0.0;           // 0 = plain gradient descent
  uint64_t init_seed = 1;

  void validate() const;
};

// Velocity buffers for SGD with optional momentum. With momentum = 0 the
// update is exactly p -= eta * grad.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.0) : momentum_(momentum) {}
  void apply(const std::string& key, Mat& param, const Mat& grad, double lr);
  void apply_scalar(const std::string& key, double& param, double grad, double lr);

 private:
  double momentum_;
  std::map<std::string, Mat> velocity_;
};

// Mean over rows of -log p[label]. Labels are 0-based column indices.
// Probabilities below 1e-12 are clamped; *clamped counts such rows if given.
double cross_entropy_loss(const PredictionMatrix& preds, const std::vector<int>& label_cols,
                          int* clamped = nullptr);

// Maps ground-truth class ids (base ids or episode labels) to columns of a
// joint prediction matrix.
std::vector<int> label_columns(const std::vector<LabeledExample>& examples);

struct PretrainResult {
  ModelState state;
  Mat w_base;  // d x N_b
  std::vector<double> loss_trajectory;
};

// Supervised cosine-classifier training on base_train.
PretrainResult pretrain(const DatasetBundle& bundle, const ModelConfig& model_cfg,
                        const TrainConfig& cfg);

// One meta-training step on the episode at `index`: incremental episode,
// prototype weights, joint prediction, cross-entropy, SGD update.
double meta_train_step_episodic(ModelState& state, Mat& w_base, const DatasetBundle& bundle,
                                const TrainConfig& cfg, SgdOptimizer& opt, uint64_t index);

// As above but the episode carries a fake unlabeled set and the novel weights
// are refined before prediction; gradients flow through the refinement.
double meta_train_step_fake_unlabeled(ModelState& state, Mat& w_base,
                                      const DatasetBundle& bundle, const TrainConfig& cfg,
                                      SgdOptimizer& opt, uint64_t index);

enum class MetaAlgorithm { Episodic, FakeUnlabeled };

struct MetaTrainResult {
  ModelState state;
  Mat w_base;
  std::vector<double> loss_trajectory;
};

// Runs cfg.meta_steps meta-training steps starting from a pretrained model.
MetaTrainResult meta_train(const ModelState& start, const Mat& w_base_start,
                           const DatasetBundle& bundle, const TrainConfig& cfg,
                           MetaAlgorithm alg,
                           const std::function<void(int, double)>& on_step = nullptr);

}  // namespace incfsl
