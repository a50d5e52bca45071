#include <cmath>

#include "doctest.h"
#include "incfsl/experiment.hpp"
#include "incfsl/training.hpp"
#include "testutil.hpp"

using namespace incfsl;
using test::finite_diff;
using test::max_rel_err;
using test::random_matrix;

namespace {

// Two base classes in 2D at distinct angles: separable by a cosine classifier.
DatasetBundle angular_bundle() {
  DatasetBundle b;
  b.dim = 2;
  b.base_classes = {1, 2};
  b.novel_classes = {3, 4, 5, 6, 7, 8};
  CounterRng rng(1, 0, Draw::SampleNoise);
  auto fill = [&](std::vector<LabeledExample>& split, double angle, int label, int count) {
    for (int i = 0; i < count; ++i) {
      const double a = angle + 0.15 * rng.next_gaussian();
      const double r = 0.8 + 0.4 * rng.next_double();
      split.push_back({Vec{{r * std::cos(a), r * std::sin(a)}}, label});
    }
  };
  fill(b.base_train, 0.0, 1, 60);
  fill(b.base_train, 1.7, 2, 60);
  fill(b.base_test, 0.0, 1, 20);
  fill(b.base_test, 1.7, 2, 20);
  fill(b.base_val, 0.0, 1, 10);
  fill(b.base_val, 1.7, 2, 10);
  fill(b.novel_train, 3.0, 3, 40);
  fill(b.novel_train, 4.2, 4, 40);
  fill(b.novel_val, 3.6, 5, 40);
  fill(b.novel_val, 5.4, 6, 40);
  fill(b.novel_test, 2.4, 7, 40);
  fill(b.novel_test, 5.9, 8, 40);
  return b;
}

TrainConfig toy_train_config() {
  TrainConfig cfg;
  cfg.eta1 = 0.05;
  cfg.eta2 = 0.05;
  cfg.pretrain_steps = 300;
  cfg.pretrain_batch = 32;
  cfg.episode.spec.n_way = 2;
  cfg.episode.spec.k_shot = 1;
  cfg.episode.spec.n_query_novel = 10;
  cfg.episode.spec.n_query_base = 10;
  cfg.episode.spec.n_unlabeled_novel = 6;
  cfg.episode.spec.n_unlabeled_base = 6;
  cfg.episode.stream_seed = 21;
  return cfg;
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.input_dim = 2;
  mc.hidden = {6};
  mc.feature_dim = 2;
  mc.gamma_init = 4.0;
  return mc;
}

double theta_distance(const ModelState& a, const ModelState& b) {
  double out = 0.0;
  for (const auto& [name, m] : a.theta)
    out = std::max(out, (m - b.theta.at(name)).cwiseAbs().maxCoeff());
  return out;
}

}  // namespace

TEST_CASE("cross entropy: one-hot, uniform, and a direct evaluation") {
  PredictionMatrix p;
  SUBCASE("exact one-hot at the truth gives zero loss") {
    p.probs = Mat(1, 3);
    p.probs << 0.0, 1.0, 0.0;
    CHECK(cross_entropy_loss(p, {1}) == doctest::Approx(0.0));
  }
  SUBCASE("uniform over C classes gives log C") {
    p.probs = Mat::Constant(2, 4, 0.25);
    CHECK(cross_entropy_loss(p, {0, 3}) == doctest::Approx(std::log(4.0)));
  }
  SUBCASE("two rows at 0.5 and 0.25 average to (log2 + log4)/2") {
    p.probs = Mat(2, 2);
    p.probs << 0.5, 0.5, 0.25, 0.75;
    const double expected = 0.5 * (std::log(2.0) + std::log(4.0));
    CHECK(cross_entropy_loss(p, {0, 0}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(1.0397).epsilon(1e-4));
  }
  SUBCASE("zero probability at the truth is clamped and flagged") {
    p.probs = Mat(1, 2);
    p.probs << 0.0, 1.0;
    int clamped = 0;
    const double loss = cross_entropy_loss(p, {0}, &clamped);
    CHECK(clamped == 1);
    CHECK(loss == doctest::Approx(-std::log(1e-12)));
  }
}

TEST_CASE("pretraining separates two angular base classes") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  const PretrainResult result = pretrain(bundle, small_model(), cfg);

  // final base-train accuracy
  const Mat feats = extract_features(result.state, stack_inputs(bundle.base_train));
  const PredictionMatrix preds =
      cosine_classify(feats, result.w_base, result.state.scale_gamma);
  int correct = 0;
  for (size_t i = 0; i < bundle.base_train.size(); ++i)
    if (argmax_row(preds.probs, static_cast<int>(i)) ==
        class_to_col(bundle.base_train[i].label))
      ++correct;
  const double acc = static_cast<double>(correct) / static_cast<double>(bundle.base_train.size());
  CHECK(acc >= 0.99);

  SUBCASE("loss decreased from initialization") {
    REQUIRE(result.loss_trajectory.size() >= 2);
    CHECK(result.loss_trajectory.back() < result.loss_trajectory.front());
  }
}

TEST_CASE("zero learning rates leave parameters unchanged") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.eta1 = 0.0;
  cfg.eta2 = 0.0;
  cfg.pretrain_steps = 25;
  const PretrainResult result = pretrain(bundle, small_model(), cfg);
  const ModelState fresh = init_model(small_model(), cfg.init_seed);
  CHECK(theta_distance(result.state, fresh) == 0.0);
  CHECK(result.state.scale_gamma == fresh.scale_gamma);

  SUBCASE("meta steps also keep parameters fixed but report the loss") {
    ModelState state = result.state;
    Mat wb = result.w_base;
    const Mat wb_before = wb;
    SgdOptimizer opt;
    const double loss = meta_train_step_episodic(state, wb, bundle, cfg, opt, 0);
    CHECK(loss > 0.0);
    CHECK(theta_distance(state, result.state) == 0.0);
    CHECK(wb == wb_before);
  }
}

TEST_CASE("episodic meta step: W_b gradient matches finite differences") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.meta_steps = 1;
  const ModelState state = init_model(small_model(), 3);
  CounterRng rng(4, 0, Draw::SampleNoise);
  const Mat w_base = random_matrix(2, 2, rng);

  // Analytic gradient: run one step with eta2 = 1 and momentum 0; the update
  // is exactly -grad.
  TrainConfig probe = cfg;
  probe.eta1 = 0.0;
  probe.eta2 = 1.0;
  ModelState s2 = state;
  Mat wb2 = w_base;
  SgdOptimizer opt;
  meta_train_step_episodic(s2, wb2, bundle, probe, opt, 5);
  const Mat analytic = w_base - wb2;

  const Episode ep = sample_incremental_episode(bundle, cfg.episode, 5);
  const auto loss_for = [&](const Mat& wb) {
    const Mat s_feats = extract_features(state, stack_inputs(ep.support));
    const Mat protos =
        compute_prototypes(s_feats, labels_of(ep.support), ep.n_base, ep.spec.n_way);
    const Mat joint = build_joint_weights(wb, protos).joint();
    const Mat q_feats = extract_features(state, stack_inputs(ep.query));
    const PredictionMatrix preds = cosine_classify(q_feats, joint, state.scale_gamma);
    return cross_entropy_loss(preds, label_columns(ep.query));
  };
  const Mat numeric = finite_diff(loss_for, w_base);
  CHECK(max_rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("fake-unlabeled step with zero unlabeled counts reduces to the episodic step") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.episode.spec.n_unlabeled_novel = 0;
  cfg.episode.spec.n_unlabeled_base = 0;

  const ModelState start = init_model(small_model(), 9);
  CounterRng rng(10, 0, Draw::SampleNoise);
  const Mat w0 = random_matrix(2, 2, rng);

  ModelState s1 = start, s2 = start;
  Mat w1 = w0, w2 = w0;
  SgdOptimizer o1, o2;
  const double l1 = meta_train_step_episodic(s1, w1, bundle, cfg, o1, 3);
  const double l2 = meta_train_step_fake_unlabeled(s2, w2, bundle, cfg, o2, 3);
  CHECK(l1 == l2);
  CHECK(theta_distance(s1, s2) == 0.0);
  CHECK(w1 == w2);
}

TEST_CASE("full fake-unlabeled step gradient matches finite differences") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.episode.spec.n_query_novel = 4;
  cfg.episode.spec.n_query_base = 4;
  cfg.episode.spec.n_unlabeled_novel = 4;
  cfg.episode.spec.n_unlabeled_base = 4;
  cfg.refinement.n_steps = 2;
  cfg.refinement.alpha = 0.7;

  const ModelState state = init_model(small_model(), 12);
  CounterRng rng(13, 0, Draw::SampleNoise);
  const Mat w_base = random_matrix(2, 2, rng);
  const uint64_t index = 2;

  // Loss as a pure function of (theta, w_base, gamma), recomputed from scratch.
  const Episode ep = sample_fake_unlabeled_episode(bundle, cfg.episode, index);
  const auto loss_for = [&](const ModelState& s, const Mat& wb) {
    ad::Tape tape;
    ModelParams params = register_model_params(tape, s);
    ad::Value w = tape.constant(wb);
    ad::Value s_feats = forward_features(tape, params, s.config, stack_inputs(ep.support));
    ad::Value protos =
        prototypes_ad(tape, s_feats, labels_of(ep.support), ep.n_base, ep.spec.n_way);
    ad::Value u_feats =
        forward_features(tape, params, s.config, stack_inputs(ep.unlabeled.features()));
    ad::Value novel =
        refine_novel_weights_ad(tape, w, protos, s_feats, labels_of(ep.support), u_feats,
                                params.gamma, ep.n_base, ep.spec.n_way, cfg.refinement);
    ad::Value joint = tape.concat_cols(w, novel);
    ad::Value q_feats = forward_features(tape, params, s.config, stack_inputs(ep.query));
    ad::Value probs = tape.softmax_rows(cosine_logits_ad(tape, q_feats, joint, params.gamma));
    return tape.scalar(nll_from_probs_ad(tape, probs, label_columns(ep.query)));
  };

  // Analytic gradients via a probe step with unit rates.
  TrainConfig probe = cfg;
  probe.eta1 = 1.0;
  probe.eta2 = 0.0;
  ModelState s2 = state;
  Mat wb2 = w_base;
  SgdOptimizer opt;
  meta_train_step_fake_unlabeled(s2, wb2, bundle, probe, opt, index);

  for (const auto& [name, m] : state.theta) {
    const Mat analytic = m - s2.theta.at(name);
    const Mat numeric = finite_diff(
        [&](const Mat& t) {
          ModelState sv = state;
          sv.theta[name] = t;
          return loss_for(sv, w_base);
        },
        m);
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }
  {
    const Mat analytic = Mat::Constant(1, 1, state.scale_gamma - s2.scale_gamma);
    const Mat numeric = finite_diff(
        [&](const Mat& g) {
          ModelState sv = state;
          sv.scale_gamma = g(0, 0);
          return loss_for(sv, w_base);
        },
        Mat::Constant(1, 1, state.scale_gamma));
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }

  TrainConfig probe2 = cfg;
  probe2.eta1 = 0.0;
  probe2.eta2 = 1.0;
  ModelState s3 = state;
  Mat wb3 = w_base;
  SgdOptimizer opt2;
  meta_train_step_fake_unlabeled(s3, wb3, bundle, probe2, opt2, index);
  const Mat analytic_wb = w_base - wb3;
  const Mat numeric_wb =
      finite_diff([&](const Mat& wb) { return loss_for(state, wb); }, w_base);
  CHECK(max_rel_err(analytic_wb, numeric_wb) < 1e-4);
}

TEST_CASE("meta steps never read the hidden unlabeled labels") {
  const DatasetBundle bundle = angular_bundle();
  const TrainConfig cfg = toy_train_config();
  const Episode probe = sample_fake_unlabeled_episode(bundle, cfg.episode, 0);
  CHECK(probe.unlabeled.oracle_access_count() == 0);

  ModelState state = init_model(small_model(), 30);
  Mat wb = Mat::Identity(2, 2);
  SgdOptimizer opt;
  meta_train_step_fake_unlabeled(state, wb, bundle, cfg, opt, 0);
  // The step samples its own episode; re-sample it and confirm its guard
  // counter was never touched inside the step path.
  const Episode replay = sample_fake_unlabeled_episode(bundle, cfg.episode, 0);
  CHECK(replay.unlabeled.oracle_access_count() == 0);
}

TEST_CASE("meta training never touches validation or test splits") {
  DatasetBundle bundle = angular_bundle();
  bundle.base_val.clear();
  bundle.base_test.clear();
  bundle.novel_val.clear();
  bundle.novel_test.clear();
  TrainConfig cfg = toy_train_config();
  cfg.pretrain_steps = 10;
  cfg.meta_steps = 5;
  const PretrainResult pre = pretrain(bundle, small_model(), cfg);
  CHECK_NOTHROW(meta_train(pre.state, pre.w_base, bundle, cfg, MetaAlgorithm::Episodic));
  CHECK_NOTHROW(meta_train(pre.state, pre.w_base, bundle, cfg, MetaAlgorithm::FakeUnlabeled));
}

TEST_CASE("training trajectory is bit-for-bit reproducible") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.pretrain_steps = 40;
  cfg.meta_steps = 15;
  const PretrainResult p1 = pretrain(bundle, small_model(), cfg);
  const PretrainResult p2 = pretrain(bundle, small_model(), cfg);
  CHECK(p1.loss_trajectory == p2.loss_trajectory);

  const MetaTrainResult m1 = meta_train(p1.state, p1.w_base, bundle, cfg, MetaAlgorithm::FakeUnlabeled);
  const MetaTrainResult m2 = meta_train(p2.state, p2.w_base, bundle, cfg, MetaAlgorithm::FakeUnlabeled);
  CHECK(m1.loss_trajectory == m2.loss_trajectory);
  CHECK(theta_distance(m1.state, m2.state) == 0.0);
}

TEST_CASE("one optimizer step moves each block by at most eta * max|grad|") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  const ModelState state = init_model(small_model(), 44);
  CounterRng rng(45, 0, Draw::SampleNoise);
  const Mat w0 = random_matrix(2, 2, rng);

  // Recover gradients through unit-rate probes, then check the real step.
  TrainConfig unit = cfg;
  unit.eta1 = 1.0;
  unit.eta2 = 1.0;
  ModelState su = state;
  Mat wu = w0;
  SgdOptimizer opt_u;
  meta_train_step_episodic(su, wu, bundle, unit, opt_u, 7);

  ModelState sr = state;
  Mat wr = w0;
  SgdOptimizer opt_r;
  meta_train_step_episodic(sr, wr, bundle, cfg, opt_r, 7);

  for (const auto& [name, m] : state.theta) {
    const double grad_inf = (m - su.theta.at(name)).cwiseAbs().maxCoeff();
    const double step_inf = (m - sr.theta.at(name)).cwiseAbs().maxCoeff();
    CHECK(step_inf <= cfg.eta1 * grad_inf + 1e-12);
  }
  CHECK((w0 - wr).cwiseAbs().maxCoeff() <=
        cfg.eta2 * (w0 - wu).cwiseAbs().maxCoeff() + 1e-12);
}

TEST_CASE("base-only queries with frozen extractor reduce to plain cosine training") {
  const DatasetBundle bundle = angular_bundle();
  TrainConfig cfg = toy_train_config();
  cfg.episode.spec.n_query_novel = 0;
  cfg.episode.spec.n_query_base = 12;
  cfg.eta1 = 0.0;  // theta frozen

  const ModelState state = init_model(small_model(), 50);
  CounterRng rng(51, 0, Draw::SampleNoise);
  const Mat w0 = random_matrix(2, 2, rng);

  ModelState s = state;
  Mat wb = w0;
  SgdOptimizer opt;
  const double step_loss = meta_train_step_episodic(s, wb, bundle, cfg, opt, 1);

  const Episode ep = sample_incremental_episode(bundle, cfg.episode, 1);
  const Mat s_feats = extract_features(state, stack_inputs(ep.support));
  const Mat protos = compute_prototypes(s_feats, labels_of(ep.support), ep.n_base, ep.spec.n_way);
  const Mat q_feats = extract_features(state, stack_inputs(ep.query));
  const PredictionMatrix preds =
      cosine_classify(q_feats, build_joint_weights(w0, protos).joint(), state.scale_gamma);
  const double module_loss = cross_entropy_loss(preds, label_columns(ep.query));
  CHECK(std::abs(step_loss - module_loss) < 1e-10);
}
