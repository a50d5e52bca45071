#include "incfsl/training.hpp"

#include <cmath>
#include <sstream>

#include "incfsl/rng.hpp"

namespace incfsl {

namespace {
constexpr double kLogEps = 1e-12;
}

void TrainConfig::validate() const {
  if (eta1 < 0.0 || eta2 < 0.0) throw ConfigError("TrainConfig: learning rates must be >= 0");
  if (pretrain_steps < 0 || meta_steps < 0) throw ConfigError("TrainConfig: negative step count");
  if (pretrain_batch < 1) throw ConfigError("TrainConfig: pretrain_batch must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum in [0, 1)");
  episode.spec.validate();
  refinement.validate();
}

void SgdOptimizer::apply(const std::string& key, Mat& param, const Mat& grad, double lr) {
  if (momentum_ == 0.0) {
    param -= lr * grad;
    return;
  }
  Mat& v = velocity_[key];
  if (v.size() == 0) v = Mat::Zero(param.rows(), param.cols());
  v = momentum_ * v + grad;
  param -= lr * v;
}

void SgdOptimizer::apply_scalar(const std::string& key, double& param, double grad, double lr) {
  Mat p(1, 1), g(1, 1);
  p(0, 0) = param;
  g(0, 0) = grad;
  apply(key, p, g, lr);
  param = p(0, 0);
}

double cross_entropy_loss(const PredictionMatrix& preds, const std::vector<int>& label_cols,
                          int* clamped) {
  if (preds.rows() != static_cast<int>(label_cols.size()))
    throw ShapeError("cross_entropy_loss: row/label count mismatch");
  if (preds.rows() == 0) throw ShapeError("cross_entropy_loss: empty prediction matrix");
  double total = 0.0;
  int clamp_count = 0;
  for (int i = 0; i < preds.rows(); ++i) {
    const int c = label_cols[static_cast<size_t>(i)];
    if (c < 0 || c >= preds.cols())
      throw ShapeError("cross_entropy_loss: label column " + std::to_string(c) + " out of range");
    double p = preds.probs(i, c);
    if (p <= kLogEps) {
      p = kLogEps;
      ++clamp_count;
    }
    total -= std::log(p);
  }
  if (clamped) *clamped = clamp_count;
  return total / static_cast<double>(preds.rows());
}

std::vector<int> label_columns(const std::vector<LabeledExample>& examples) {
  std::vector<int> cols;
  cols.reserve(examples.size());
  for (const auto& ex : examples) cols.push_back(class_to_col(ex.label));
  return cols;
}

namespace {

// Shared tail of every training step: backward pass plus SGD on theta, gamma
// and W_b with their respective rates.
void apply_updates(ad::Tape& tape, ad::Value loss, ModelState& state, Mat& w_base,
                   const ModelParams& params, ad::Value w_base_param, const TrainConfig& cfg,
                   SgdOptimizer& opt) {
  tape.backward(loss);
  for (auto& [name, value] : params.theta)
    opt.apply(name, state.theta.at(name), tape.grad(value), cfg.eta1);
  opt.apply_scalar("scale_gamma", state.scale_gamma, tape.grad(params.gamma)(0, 0), cfg.eta1);
  opt.apply("w_base", w_base, tape.grad(w_base_param), cfg.eta2);
}

}  // namespace

PretrainResult pretrain(const DatasetBundle& bundle, const ModelConfig& model_cfg,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (bundle.base_train.empty()) throw ConfigError("pretrain: base_train is empty");

  PretrainResult result;
  result.state = init_model(model_cfg, cfg.init_seed);
  const int d = result.state.d();
  const int n_base = bundle.n_base_classes();

  // Base weight columns start as small random directions.
  CounterRng winit(cfg.init_seed, 1, Draw::ParamInit);
  result.w_base = Mat(d, n_base);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n_base; ++j) result.w_base(i, j) = scale * winit.next_gaussian();

  SgdOptimizer opt(cfg.momentum);
  const int n_train = static_cast<int>(bundle.base_train.size());
  for (int step = 0; step < cfg.pretrain_steps; ++step) {
    CounterRng rng(cfg.init_seed, static_cast<uint64_t>(step), Draw::PretrainBatch);
    const int batch = std::min(cfg.pretrain_batch, n_train);
    std::vector<LabeledExample> examples;
    examples.reserve(static_cast<size_t>(batch));
    for (int pos : rng.sample_without_replacement(n_train, batch))
      examples.push_back(bundle.base_train[static_cast<size_t>(pos)]);

    ad::Tape tape;
    ModelParams params = register_model_params(tape, result.state);
    ad::Value wb = tape.param(result.w_base);
    ad::Value feats = forward_features(tape, params, model_cfg, stack_inputs(examples));
    ad::Value probs = tape.softmax_rows(cosine_logits_ad(tape, feats, wb, params.gamma));
    ad::Value loss = nll_from_probs_ad(tape, probs, label_columns(examples), kLogEps);

    const double loss_value = tape.scalar(loss);
    if (!std::isfinite(loss_value)) {
      std::ostringstream os;
      os << "pretraining diverged: loss is not finite at step " << step;
      throw std::runtime_error(os.str());
    }
    result.loss_trajectory.push_back(loss_value);
    apply_updates(tape, loss, result.state, result.w_base, params, wb, cfg, opt);
  }
  return result;
}

namespace {

double meta_step_impl(ModelState& state, Mat& w_base, const DatasetBundle& bundle,
                      const TrainConfig& cfg, SgdOptimizer& opt, uint64_t index,
                      bool with_fake_unlabeled) {
  cfg.validate();
  const bool want_unlabeled = with_fake_unlabeled && (cfg.episode.spec.n_unlabeled_novel > 0 ||
                                                      cfg.episode.spec.n_unlabeled_base > 0);
  const Episode episode = want_unlabeled
                              ? sample_fake_unlabeled_episode(bundle, cfg.episode, index)
                              : sample_incremental_episode(bundle, cfg.episode, index);

  const int n_base = episode.n_base;
  const int n_way = episode.spec.n_way;
  const std::vector<int> support_labels = labels_of(episode.support);

  ad::Tape tape;
  ModelParams params = register_model_params(tape, state);
  ad::Value wb = tape.param(w_base);

  ad::Value s_feats = forward_features(tape, params, state.config, stack_inputs(episode.support));
  ad::Value novel = prototypes_ad(tape, s_feats, support_labels, n_base, n_way);

  if (want_unlabeled && !episode.unlabeled.empty()) {
    ad::Value u_feats = forward_features(tape, params, state.config,
                                         stack_inputs(episode.unlabeled.features()));
    novel = refine_novel_weights_ad(tape, wb, novel, s_feats, support_labels, u_feats,
                                    params.gamma, n_base, n_way, cfg.refinement,
                                    /*stop_gradient_pseudo=*/!cfg.grad_through_refinement);
  }

  ad::Value joint = tape.concat_cols(wb, novel);
  ad::Value q_feats = forward_features(tape, params, state.config, stack_inputs(episode.query));
  ad::Value probs = tape.softmax_rows(cosine_logits_ad(tape, q_feats, joint, params.gamma));
  ad::Value loss = nll_from_probs_ad(tape, probs, label_columns(episode.query), kLogEps);

  const double loss_value = tape.scalar(loss);
  if (!std::isfinite(loss_value)) {
    std::ostringstream os;
    os << "meta-training diverged: loss is not finite at episode " << index;
    throw std::runtime_error(os.str());
  }
  apply_updates(tape, loss, state, w_base, params, wb, cfg, opt);
  return loss_value;
}

}  // namespace

double meta_train_step_episodic(ModelState& state, Mat& w_base, const DatasetBundle& bundle,
                                const TrainConfig& cfg, SgdOptimizer& opt, uint64_t index) {
  return meta_step_impl(state, w_base, bundle, cfg, opt, index, /*with_fake_unlabeled=*/false);
}

double meta_train_step_fake_unlabeled(ModelState& state, Mat& w_base,
                                      const DatasetBundle& bundle, const TrainConfig& cfg,
                                      SgdOptimizer& opt, uint64_t index) {
  return meta_step_impl(state, w_base, bundle, cfg, opt, index, /*with_fake_unlabeled=*/true);
}

MetaTrainResult meta_train(const ModelState& start, const Mat& w_base_start,
                           const DatasetBundle& bundle, const TrainConfig& cfg,
                           MetaAlgorithm alg, const std::function<void(int, double)>& on_step) {
  MetaTrainResult result;
  result.state = start;
  result.w_base = w_base_start;
  SgdOptimizer opt(cfg.momentum);
  for (int step = 0; step < cfg.meta_steps; ++step) {
    const double loss =
        alg == MetaAlgorithm::Episodic
            ? meta_train_step_episodic(result.state, result.w_base, bundle, cfg, opt,
                                       static_cast<uint64_t>(step))
            : meta_train_step_fake_unlabeled(result.state, result.w_base, bundle, cfg, opt,
                                             static_cast<uint64_t>(step));
    result.loss_trajectory.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return result;
}

}  // namespace incfsl
