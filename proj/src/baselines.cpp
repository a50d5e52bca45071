#include "incfsl/baselines.hpp"

#include <cmath>

#include "incfsl/rng.hpp"
#include "incfsl/training.hpp"

namespace incfsl {

namespace {
constexpr double kLogEps = 1e-12;
constexpr double kUnderflow = 1e-300;
}  // namespace

LabelPropagationResult label_propagation_predict(const ClassifierWeights& weights,
                                                 const Mat& unlabeled_features,
                                                 const Mat& query_features,
                                                 const GraphConfig& cfg) {
  cfg.validate();
  const int n_classes = weights.n_base() + weights.n_way();
  const int n_u = static_cast<int>(unlabeled_features.rows());
  const int n_q = static_cast<int>(query_features.rows());
  if (n_classes == 0 || n_q == 0)
    throw ShapeError("label_propagation_predict: empty vertex set");

  // Vertex feature matrix: weight columns, unlabeled rows, query rows.
  const int n_v = n_classes + n_u + n_q;
  Mat vertices(n_v, weights.d());
  vertices.topRows(n_classes) = weights.joint().transpose();
  if (n_u > 0) vertices.middleRows(n_classes, n_u) = unlabeled_features;
  vertices.bottomRows(n_q) = query_features;

  // Gaussian kernel on cosine distance, zero diagonal.
  Mat dirs = vertices;
  for (int i = 0; i < n_v; ++i) dirs.row(i) /= std::max(dirs.row(i).norm(), 1e-12);
  const Mat cos = dirs * dirs.transpose();
  Mat kernel(n_v, n_v);
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (int i = 0; i < n_v; ++i)
    for (int j = 0; j < n_v; ++j) {
      const double dist = 1.0 - cos(i, j);
      kernel(i, j) = i == j ? 0.0 : std::exp(-dist * dist * inv);
    }

  // Row-stochastic propagation matrix; isolated rows stay all-zero.
  Mat s = kernel;
  std::vector<bool> isolated(static_cast<size_t>(n_v), false);
  for (int i = 0; i < n_v; ++i) {
    const double row_sum = kernel.row(i).sum();
    if (row_sum <= kUnderflow) {
      isolated[static_cast<size_t>(i)] = true;
      s.row(i).setZero();
    } else {
      s.row(i) /= row_sum;
    }
  }

  Mat y0 = Mat::Zero(n_v, n_classes);
  for (int c = 0; c < n_classes; ++c) y0(c, c) = 1.0;

  const Mat f0 = s * y0;  // one-step kernel-normalized assignment
  Mat f = f0;
  for (int it = 0; it < cfg.iterations; ++it) f = cfg.lambda * (s * f) + (1.0 - cfg.lambda) * f0;

  LabelPropagationResult result;
  result.preds.probs = Mat::Zero(n_q, n_classes);
  for (int q = 0; q < n_q; ++q) {
    const int v = n_classes + n_u + q;
    const double mass = f.row(v).sum();
    if (isolated[static_cast<size_t>(v)] || mass <= kUnderflow) {
      // Disconnected query: direct cosine classification against the weights.
      result.preds.probs.row(q) =
          cosine_classify(query_features.row(q), weights.joint(), 1.0).probs.row(0);
      ++result.fallback_rows;
    } else {
      result.preds.probs.row(q) = f.row(v) / mass;
    }
  }
  return result;
}

FixMatchResult fixmatch_adapt(const ModelState& state, const Mat& w_base, const Episode& episode,
                              const FixMatchConfig& cfg, uint64_t stream_seed) {
  cfg.validate();
  if (episode.unlabeled.empty()) throw ConfigError("fixmatch_adapt: empty unlabeled set");

  FixMatchResult result;
  result.state = state;
  result.w_base = w_base;

  const int n_base = episode.n_base;
  const int n_way = episode.spec.n_way;
  const std::vector<int> support_labels = labels_of(episode.support);
  const Mat support_inputs = stack_inputs(episode.support);
  const int n_u = static_cast<int>(episode.unlabeled.size());
  const int batch = std::min(cfg.batch, n_u);

  SgdOptimizer opt;
  for (int step = 0; step < cfg.steps; ++step) {
    CounterRng batch_rng(stream_seed, episode.index, Draw::FixMatchBatch,
                         static_cast<uint64_t>(step));
    const std::vector<int> picks = batch_rng.sample_without_replacement(n_u, batch);
    CounterRng view_rng(stream_seed, episode.index, Draw::AugmentViews,
                        static_cast<uint64_t>(step) * 2 + 1);

    Mat weak(batch, state.config.input_dim), strong(batch, state.config.input_dim);
    for (int b = 0; b < batch; ++b) {
      const Vec& x = episode.unlabeled.features()[static_cast<size_t>(picks[b])];
      auto [w, _] = make_views(x, cfg.weak, view_rng);
      auto [s, __] = make_views(x, cfg.strong, view_rng);
      weak.row(b) = w.transpose();
      strong.row(b) = s.transpose();
    }

    // Pseudo-labels from the weak view against the current joint weights.
    const Mat s_feats_plain = extract_features(result.state, support_inputs);
    const Mat protos = compute_prototypes(s_feats_plain, support_labels, n_base, n_way);
    const Mat joint_now = build_joint_weights(result.w_base, protos).joint();
    const PredictionMatrix weak_preds =
        cosine_classify(extract_features(result.state, weak), joint_now,
                        result.state.scale_gamma);
    std::vector<int> confident_rows, pseudo_cols;
    for (int b = 0; b < batch; ++b) {
      const int c = argmax_row(weak_preds.probs, b);
      if (weak_preds.probs(b, c) >= cfg.threshold) {
        confident_rows.push_back(b);
        pseudo_cols.push_back(c);
      }
    }
    result.confident_total += static_cast<int>(confident_rows.size());

    ad::Tape tape;
    ModelParams params = register_model_params(tape, result.state);
    ad::Value wb = tape.param(result.w_base);
    ad::Value s_feats = forward_features(tape, params, state.config, support_inputs);
    ad::Value novel = prototypes_ad(tape, s_feats, support_labels, n_base, n_way);
    ad::Value joint = tape.concat_cols(wb, novel);

    ad::Value s_probs = tape.softmax_rows(cosine_logits_ad(tape, s_feats, joint, params.gamma));
    ad::Value loss =
        nll_from_probs_ad(tape, s_probs, label_columns(episode.support), kLogEps);

    if (!confident_rows.empty() && cfg.consistency_weight > 0.0) {
      Mat strong_sel(static_cast<int>(confident_rows.size()), state.config.input_dim);
      for (size_t r = 0; r < confident_rows.size(); ++r)
        strong_sel.row(static_cast<Eigen::Index>(r)) = strong.row(confident_rows[r]);
      ad::Value u_feats = forward_features(tape, params, state.config, strong_sel);
      ad::Value u_probs =
          tape.softmax_rows(cosine_logits_ad(tape, u_feats, joint, params.gamma));
      loss = tape.add(loss, tape.scalar_mul(nll_from_probs_ad(tape, u_probs, pseudo_cols,
                                                              kLogEps),
                                            cfg.consistency_weight));
    }

    if (!std::isfinite(tape.scalar(loss))) break;
    result.loss_trajectory.push_back(tape.scalar(loss));
    tape.backward(loss);
    for (auto& [name, value] : params.theta)
      opt.apply(name, result.state.theta.at(name), tape.grad(value), cfg.lr);
    opt.apply_scalar("scale_gamma", result.state.scale_gamma, tape.grad(params.gamma)(0, 0),
                     cfg.lr);
    opt.apply("w_base", result.w_base, tape.grad(wb), cfg.lr);
  }
  return result;
}

EpisodeMetrics run_plain_pr(const ModelState& state, const Mat& w_base, const Episode& episode,
                            const RefinementConfig& cfg) {
  const Mat s_features = extract_features(state, stack_inputs(episode.support));
  const Mat protos = compute_prototypes(s_features, labels_of(episode.support), episode.n_base,
                                        episode.spec.n_way);
  const ClassifierWeights start = build_joint_weights(w_base, protos);
  const RefineResult refined = refine_loop(state, start, episode, cfg);
  return evaluate_episode_with(state, refined.weights, episode);
}

}  // namespace incfsl
