#pragma once

#include <utility>
#include <vector>

#include "incfsl/core_types.hpp"
#include "incfsl/model.hpp"
#include "incfsl/rng.hpp"

namespace incfsl {

// Vector-space stand-in for image augmentation: additive Gaussian noise plus
// random coordinate masking.
struct AugmentationSpec {
  double sigma = 0.1;
  double mask_rate = 0.1;
};

struct AdaptationConfig {
  double w_cls = 1.0;
  double w_ctr = 0.5;
  double w_dst = 1.0;
  double tau1 = 0.5;  // contrastive temperature
  double tau2 = 4.0;  // distillation temperature
  int batch = 64;     // per-step unlabeled batch (capped at |U|)
  int steps = 30;
  double lr = 1e-3;
  AugmentationSpec augmentation;
  bool classify_support_all_classes = true;  // false: novel columns only

  void validate() const;
};

// Frozen copy of the meta-trained parameters; the distillation target.
struct TeacherSnapshot {
  std::map<std::string, Mat> theta_bar;
  Mat w_base_bar;
  double gamma = 0.0;
  ModelConfig config;

  static TeacherSnapshot of(const ModelState& state, const Mat& w_base);
};

// Two stochastic views of one input.
std::pair<Vec, Vec> make_views(const Vec& sample, const AugmentationSpec& spec, CounterRng& rng);

// Normalized-temperature contrastive loss over 2B view features. pairing must
// be a fixed-point-free involution: pairing[i] is the positive partner of i.
double contrastive_loss(const Mat& view_features, const std::vector<int>& pairing, double tau1);
ad::Value contrastive_loss_ad(ad::Tape& tape, ad::Value view_features,
                              const std::vector<int>& pairing, double tau1);

// Soft cross-entropy between the teacher's and the student's tau2-softened
// base-class predictions on a batch of raw inputs. Each model applies its own
// gamma before the temperature.
double distillation_loss(const Mat& inputs, const ModelState& student, const Mat& student_w_base,
                         const TeacherSnapshot& teacher, double tau2, int* clamped = nullptr);

// Teacher's softened base-class distribution for a batch (no gradient).
Mat teacher_soft_predictions(const Mat& inputs, const TeacherSnapshot& teacher, double tau2);

// Student-side tape value of the distillation loss given precomputed teacher
// probabilities.
ad::Value distillation_loss_ad(ad::Tape& tape, ad::Value student_features, ad::Value w_base,
                               ad::Value gamma, const Mat& teacher_probs, double tau2);

struct AdaptResult {
  ModelState state;
  Mat w_base;
  bool fell_back = false;  // loss went non-finite; original parameters returned
  int steps_run = 0;
};

// Test-time adaptation of {theta, W_b, gamma} on one episode: classification
// loss on S against [W_b, prototypes(S)], contrastive loss on augmented views
// of U, and distillation toward the pre-adaptation snapshot. Hidden labels of
// U are never read.
AdaptResult adapt_model(const ModelState& state, const Mat& w_base, const Episode& episode,
                        const AdaptationConfig& cfg, uint64_t stream_seed);

}  // namespace incfsl
