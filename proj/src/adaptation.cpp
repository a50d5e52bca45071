#include "incfsl/adaptation.hpp"

#include <cmath>

#include "incfsl/training.hpp"

namespace incfsl {

namespace {
constexpr double kLogEps = 1e-12;
constexpr double kDiagMask = -1e9;

void check_pairing(const std::vector<int>& pairing) {
  const int n = static_cast<int>(pairing.size());
  if (n == 0 || n % 2 != 0)
    throw ConfigError("contrastive pairing must cover an even, non-zero view count");
  for (int i = 0; i < n; ++i) {
    const int j = pairing[static_cast<size_t>(i)];
    if (j < 0 || j >= n || j == i || pairing[static_cast<size_t>(j)] != i)
      throw ConfigError("contrastive pairing must be an involution without fixed points");
  }
}
}  // namespace

void AdaptationConfig::validate() const {
  if (w_cls < 0.0 || w_ctr < 0.0 || w_dst < 0.0)
    throw ConfigError("AdaptationConfig: loss weights must be >= 0");
  if (tau1 <= 0.0 || tau2 <= 0.0) throw ConfigError("AdaptationConfig: temperatures must be > 0");
  if (batch < 1) throw ConfigError("AdaptationConfig: batch must be >= 1");
  if (steps < 0) throw ConfigError("AdaptationConfig: steps must be >= 0");
  if (lr < 0.0) throw ConfigError("AdaptationConfig: lr must be >= 0");
  if (augmentation.sigma < 0.0 || augmentation.mask_rate < 0.0 || augmentation.mask_rate > 1.0)
    throw ConfigError("AdaptationConfig: bad augmentation spec");
}

TeacherSnapshot TeacherSnapshot::of(const ModelState& state, const Mat& w_base) {
  TeacherSnapshot t;
  t.theta_bar = state.theta;
  t.w_base_bar = w_base;
  t.gamma = state.scale_gamma;
  t.config = state.config;
  return t;
}

std::pair<Vec, Vec> make_views(const Vec& sample, const AugmentationSpec& spec, CounterRng& rng) {
  auto one_view = [&]() {
    Vec v = sample;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += spec.sigma * rng.next_gaussian();
    if (spec.mask_rate > 0.0)
      for (Eigen::Index i = 0; i < v.size(); ++i)
        if (rng.next_double() < spec.mask_rate) v(i) = 0.0;
    return v;
  };
  Vec a = one_view();
  Vec b = one_view();
  return {std::move(a), std::move(b)};
}

ad::Value contrastive_loss_ad(ad::Tape& tape, ad::Value view_features,
                              const std::vector<int>& pairing, double tau1) {
  check_pairing(pairing);
  if (tau1 <= 0.0) throw ConfigError("contrastive_loss: tau1 must be > 0");
  const int n = static_cast<int>(pairing.size());
  if (tape.val(view_features).rows() != n)
    throw ShapeError("contrastive_loss: pairing size != feature rows");

  ad::Value fn = tape.l2_normalize_rows(view_features);
  ad::Value sims = tape.scalar_mul(tape.matmul(fn, tape.transpose(fn)), 1.0 / tau1);
  // Self-similarities are excluded from the denominator.
  Mat mask = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) mask(i, i) = kDiagMask;
  ad::Value masked = tape.add(sims, tape.constant(mask));
  ad::Value lse = tape.row_logsumexp(masked);
  ad::Value pos = tape.gather_per_row(sims, pairing);
  return tape.mean_all(tape.sub(lse, pos));
}

double contrastive_loss(const Mat& view_features, const std::vector<int>& pairing, double tau1) {
  ad::Tape tape;
  return tape.scalar(contrastive_loss_ad(tape, tape.constant(view_features), pairing, tau1));
}

Mat teacher_soft_predictions(const Mat& inputs, const TeacherSnapshot& teacher, double tau2) {
  ModelState frozen;
  frozen.config = teacher.config;
  frozen.theta = teacher.theta_bar;
  frozen.scale_gamma = teacher.gamma;
  const Mat feats = extract_features(frozen, inputs);
  return softmax_rows(cosine_logits(feats, teacher.w_base_bar, teacher.gamma / tau2));
}

ad::Value distillation_loss_ad(ad::Tape& tape, ad::Value student_features, ad::Value w_base,
                               ad::Value gamma, const Mat& teacher_probs, double tau2) {
  if (tau2 <= 0.0) throw ConfigError("distillation_loss: tau2 must be > 0");
  const Eigen::Index batch = teacher_probs.rows();
  if (tape.val(student_features).rows() != batch)
    throw ShapeError("distillation_loss: batch size mismatch");
  ad::Value logits = tape.scalar_mul(cosine_logits_ad(tape, student_features, w_base, gamma),
                                     1.0 / tau2);
  ad::Value log_student = tape.log_clamped(tape.softmax_rows(logits), kLogEps);
  ad::Value weighted = tape.mul_elem(tape.constant(teacher_probs), log_student);
  return tape.scalar_mul(tape.sum_all(weighted), -1.0 / static_cast<double>(batch));
}

double distillation_loss(const Mat& inputs, const ModelState& student, const Mat& student_w_base,
                         const TeacherSnapshot& teacher, double tau2, int* clamped) {
  if (student.d() != teacher.w_base_bar.rows() ||
      student_w_base.cols() != teacher.w_base_bar.cols())
    throw ShapeError("distillation_loss: student/teacher dimensions differ");
  const Mat teacher_probs = teacher_soft_predictions(inputs, teacher, tau2);
  ad::Tape tape;
  ad::Value feats = tape.constant(extract_features(student, inputs));
  ad::Value loss = distillation_loss_ad(tape, feats, tape.constant(student_w_base),
                                        tape.constant(Mat::Constant(1, 1, student.scale_gamma)),
                                        teacher_probs, tau2);
  if (clamped) *clamped = tape.clamp_events();
  return tape.scalar(loss);
}

AdaptResult adapt_model(const ModelState& state, const Mat& w_base, const Episode& episode,
                        const AdaptationConfig& cfg, uint64_t stream_seed) {
  cfg.validate();
  if (episode.support.empty()) throw ConfigError("adapt_model: episode has no support set");
  const bool use_unlabeled = cfg.w_ctr > 0.0 || cfg.w_dst > 0.0;
  if (use_unlabeled && episode.unlabeled.empty())
    throw ConfigError("adapt_model: contrastive/distillation losses need a non-empty U");

  const TeacherSnapshot teacher = TeacherSnapshot::of(state, w_base);

  AdaptResult result;
  result.state = state;
  result.w_base = w_base;

  const int n_base = episode.n_base;
  const int n_way = episode.spec.n_way;
  const std::vector<int> support_labels = labels_of(episode.support);
  const Mat support_inputs = stack_inputs(episode.support);
  const int n_u = static_cast<int>(episode.unlabeled.size());
  const int batch = use_unlabeled ? std::min(cfg.batch, n_u) : 0;

  SgdOptimizer opt;
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Tape tape;
    ModelParams params = register_model_params(tape, result.state);
    ad::Value wb = tape.param(result.w_base);

    ad::Value loss = tape.constant(Mat::Zero(1, 1));
    if (cfg.w_cls > 0.0) {
      ad::Value s_feats =
          forward_features(tape, params, result.state.config, support_inputs);
      ad::Value novel = prototypes_ad(tape, s_feats, support_labels, n_base, n_way);
      ad::Value weights = cfg.classify_support_all_classes ? tape.concat_cols(wb, novel) : novel;
      ad::Value probs =
          tape.softmax_rows(cosine_logits_ad(tape, s_feats, weights, params.gamma));
      std::vector<int> cols;
      cols.reserve(support_labels.size());
      for (int lbl : support_labels)
        cols.push_back(cfg.classify_support_all_classes ? class_to_col(lbl)
                                                        : lbl - n_base - 1);
      loss = tape.add(loss, tape.scalar_mul(nll_from_probs_ad(tape, probs, cols, kLogEps),
                                            cfg.w_cls));
    }

    if (use_unlabeled) {
      CounterRng batch_rng(stream_seed, episode.index, Draw::AdaptBatch,
                           static_cast<uint64_t>(step));
      std::vector<int> picks = batch_rng.sample_without_replacement(n_u, batch);

      if (cfg.w_ctr > 0.0) {
        CounterRng view_rng(stream_seed, episode.index, Draw::AugmentViews,
                            static_cast<uint64_t>(step));
        Mat views(2 * batch, result.state.config.input_dim);
        std::vector<int> pairing(static_cast<size_t>(2 * batch));
        for (int b = 0; b < batch; ++b) {
          auto [va, vb2] =
              make_views(episode.unlabeled.features()[static_cast<size_t>(picks[b])],
                         cfg.augmentation, view_rng);
          views.row(2 * b) = va.transpose();
          views.row(2 * b + 1) = vb2.transpose();
          pairing[static_cast<size_t>(2 * b)] = 2 * b + 1;
          pairing[static_cast<size_t>(2 * b + 1)] = 2 * b;
        }
        ad::Value v_feats = forward_features(tape, params, result.state.config, views);
        loss = tape.add(loss, tape.scalar_mul(
                                  contrastive_loss_ad(tape, v_feats, pairing, cfg.tau1),
                                  cfg.w_ctr));
      }

      if (cfg.w_dst > 0.0) {
        Mat raw(batch, result.state.config.input_dim);
        for (int b = 0; b < batch; ++b)
          raw.row(b) =
              episode.unlabeled.features()[static_cast<size_t>(picks[b])].transpose();
        const Mat teacher_probs = teacher_soft_predictions(raw, teacher, cfg.tau2);
        ad::Value u_feats = forward_features(tape, params, result.state.config, raw);
        loss = tape.add(loss, tape.scalar_mul(distillation_loss_ad(tape, u_feats, wb,
                                                                   params.gamma, teacher_probs,
                                                                   cfg.tau2),
                                              cfg.w_dst));
      }
    }

    const double loss_value = tape.scalar(loss);
    if (!std::isfinite(loss_value)) {
      result.state = state;  // fall back to the unadapted parameters
      result.w_base = w_base;
      result.fell_back = true;
      return result;
    }

    tape.backward(loss);
    for (auto& [name, value] : params.theta)
      opt.apply(name, result.state.theta.at(name), tape.grad(value), cfg.lr);
    opt.apply_scalar("scale_gamma", result.state.scale_gamma, tape.grad(params.gamma)(0, 0),
                     cfg.lr);
    opt.apply("w_base", result.w_base, tape.grad(wb), cfg.lr);
    ++result.steps_run;
  }
  return result;
}

}  // namespace incfsl
