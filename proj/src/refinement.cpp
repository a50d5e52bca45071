#include "incfsl/refinement.hpp"

namespace incfsl {

Mat slice_novel_predictions(const PredictionMatrix& preds, int n_base) {
  if (n_base >= preds.cols())
    throw ShapeError("slice_novel_predictions: n_base >= column count");
  return preds.probs.rightCols(preds.cols() - n_base);
}

Mat reestimate_prototypes(const Mat& y_novel, const Mat& unlabeled_features,
                          const Mat& support_features, const std::vector<int>& support_labels,
                          int n_base) {
  const int n_way = static_cast<int>(y_novel.cols());
  if (y_novel.rows() != unlabeled_features.rows())
    throw ShapeError("reestimate_prototypes: y_novel rows != unlabeled feature rows");
  if (support_features.rows() != static_cast<Eigen::Index>(support_labels.size()))
    throw ShapeError("reestimate_prototypes: support feature/label count mismatch");
  if (unlabeled_features.rows() > 0 && unlabeled_features.cols() != support_features.cols())
    throw ShapeError("reestimate_prototypes: feature dimension mismatch");

  const Mat h = support_membership(support_labels, n_base, n_way, /*normalized=*/false);
  Mat numer = support_features.transpose() * h;  // d x N
  Eigen::RowVectorXd denom = h.colwise().sum();
  if (y_novel.rows() > 0) {
    numer += unlabeled_features.transpose() * y_novel;
    denom += y_novel.colwise().sum();
  }
  return numer.array().rowwise() / denom.array();
}

Mat ema_update(const Mat& p_old, const Mat& p_new, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: alpha must lie in (0, 1]");
  if (p_old.rows() != p_new.rows() || p_old.cols() != p_new.cols())
    throw ShapeError("ema_update: shape mismatch");
  return alpha * p_new + (1.0 - alpha) * p_old;
}

RefineResult refine_loop(const ModelState& state, const ClassifierWeights& weights,
                         const Episode& episode, const RefinementConfig& cfg) {
  cfg.validate();
  if (episode.unlabeled.empty()) return {weights, /*empty_unlabeled=*/true};

  const Mat u_features = extract_features(state, stack_inputs(episode.unlabeled.features()));
  const Mat s_features = extract_features(state, stack_inputs(episode.support));
  const std::vector<int> s_labels = labels_of(episode.support);
  const int n_base = weights.n_base();

  Mat novel = weights.novel;
  for (int step = 0; step < cfg.n_steps; ++step) {
    const PredictionMatrix preds =
        cosine_classify(u_features, build_joint_weights(weights.base, novel), state.scale_gamma);
    const Mat y_novel = slice_novel_predictions(preds, n_base);
    const Mat p_new = reestimate_prototypes(y_novel, u_features, s_features, s_labels, n_base);
    novel = ema_update(novel, p_new, cfg.alpha);
  }
  return {build_joint_weights(weights.base, novel), false};
}

ad::Value refine_novel_weights_ad(ad::Tape& tape, ad::Value w_base, ad::Value novel_weights,
                                  ad::Value support_features,
                                  const std::vector<int>& support_labels,
                                  ad::Value unlabeled_features, ad::Value gamma, int n_base,
                                  int n_way, const RefinementConfig& cfg,
                                  bool stop_gradient_pseudo) {
  cfg.validate();
  const Mat h = support_membership(support_labels, n_base, n_way, /*normalized=*/false);
  const ad::Value h_const = tape.constant(h);
  const ad::Value support_mass = tape.constant(h.colwise().sum());
  const ad::Value support_numer = tape.matmul(tape.transpose(support_features), h_const);

  ad::Value novel = novel_weights;
  for (int step = 0; step < cfg.n_steps; ++step) {
    ad::Value joint = tape.concat_cols(w_base, novel);
    ad::Value probs = tape.softmax_rows(cosine_logits_ad(tape, unlabeled_features, joint, gamma));
    ad::Value y_novel = tape.slice_cols(probs, n_base, n_way);
    if (stop_gradient_pseudo) y_novel = tape.detach(y_novel);
    ad::Value numer =
        tape.add(tape.matmul(tape.transpose(unlabeled_features), y_novel), support_numer);
    ad::Value denom = tape.add(tape.col_sum(y_novel), support_mass);
    ad::Value p_new = tape.div_by_rowvec(numer, denom);
    novel = tape.add(tape.scalar_mul(p_new, cfg.alpha), tape.scalar_mul(novel, 1.0 - cfg.alpha));
  }
  return novel;
}

}  // namespace incfsl
