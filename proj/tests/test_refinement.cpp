#include <array>

#include "doctest.h"
#include "incfsl/refinement.hpp"
#include "incfsl/sampler.hpp"
#include "testutil.hpp"

using namespace incfsl;
using test::random_matrix;

namespace {

PredictionMatrix preds_of(std::initializer_list<std::initializer_list<double>> rows) {
  PredictionMatrix p;
  p.probs = Mat(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) p.probs(i, j++) = v;
    ++i;
  }
  return p;
}

// Straight-line reimplementation of one refinement pass with plain loops;
// intentionally shares no code with the library path.
std::vector<std::vector<double>> brute_force_refine(
    const std::vector<std::vector<double>>& w_base, std::vector<std::vector<double>> w_novel,
    const std::vector<std::vector<double>>& support,
    const std::vector<int>& support_class,  // 0-based novel class per support row
    const std::vector<std::vector<double>>& unlabeled, double gamma, int n_steps, double alpha) {
  const size_t d = w_base.front().size();
  const size_t n_base = w_base.size();
  const size_t n_way = w_novel.size();

  auto cosine = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
  };

  for (int step = 0; step < n_steps; ++step) {
    // softmax over all columns for each unlabeled point
    std::vector<std::vector<double>> y_novel(unlabeled.size(),
                                             std::vector<double>(n_way, 0.0));
    for (size_t u = 0; u < unlabeled.size(); ++u) {
      std::vector<double> logits;
      for (size_t c = 0; c < n_base; ++c) logits.push_back(gamma * cosine(unlabeled[u], w_base[c]));
      for (size_t c = 0; c < n_way; ++c) logits.push_back(gamma * cosine(unlabeled[u], w_novel[c]));
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double sum = 0;
      for (double& v : logits) {
        v = std::exp(v - mx);
        sum += v;
      }
      for (size_t c = 0; c < n_way; ++c) y_novel[u][c] = logits[n_base + c] / sum;
    }
    // weighted mean per novel class
    for (size_t c = 0; c < n_way; ++c) {
      std::vector<double> numer(d, 0.0);
      double denom = 0.0;
      for (size_t u = 0; u < unlabeled.size(); ++u) {
        for (size_t i = 0; i < d; ++i) numer[i] += y_novel[u][c] * unlabeled[u][i];
        denom += y_novel[u][c];
      }
      for (size_t s = 0; s < support.size(); ++s) {
        if (support_class[s] != static_cast<int>(c)) continue;
        for (size_t i = 0; i < d; ++i) numer[i] += support[s][i];
        denom += 1.0;
      }
      for (size_t i = 0; i < d; ++i)
        w_novel[c][i] = alpha * (numer[i] / denom) + (1.0 - alpha) * w_novel[c][i];
    }
  }
  return w_novel;
}

}  // namespace

TEST_CASE("slicing drops base mass without renormalizing") {
  SUBCASE("full base mass leaves a zero row") {
    const Mat y = slice_novel_predictions(preds_of({{1.0, 0.0, 0.0}}), 1);
    CHECK(y.row(0).sum() == 0.0);
  }
  SUBCASE("full novel mass keeps a unit row") {
    const Mat y = slice_novel_predictions(preds_of({{0.0, 0.0, 1.0}}), 1);
    CHECK(y(0, 1) == 1.0);
    CHECK(y.row(0).sum() == 1.0);
  }
  SUBCASE("0.6 base / 0.4 novel keeps 0.4") {
    const Mat y = slice_novel_predictions(preds_of({{0.6, 0.1, 0.3}}), 1);
    CHECK(y.row(0).sum() == doctest::Approx(0.4));
  }
  SUBCASE("n_base >= column count is a shape error") {
    CHECK_THROWS_AS(slice_novel_predictions(preds_of({{0.5, 0.5}}), 2), ShapeError);
  }
}

TEST_CASE("re-estimation reduces to the support mean when unlabeled mass is zero") {
  CounterRng rng(3, 0, Draw::SampleNoise);
  const Mat support = random_matrix(4, 3, rng);
  const std::vector<int> labels = {6, 6, 7, 7};
  const Mat y = Mat::Zero(5, 2);
  const Mat u = random_matrix(5, 3, rng);
  const Mat p = reestimate_prototypes(y, u, support, labels, 5);
  const Mat expected = compute_prototypes(support, labels, 5, 2);
  CHECK((p - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one unlabeled point with weight 1 and one support point average") {
  Mat support(1, 2);
  support << 1.0, 0.0;
  Mat u(1, 2);
  u << 0.0, 1.0;
  Mat y(1, 1);
  y << 1.0;
  const Mat p = reestimate_prototypes(y, u, support, {2}, 1);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("re-estimation matches a brute-force weighted mean") {
  CounterRng rng(5, 0, Draw::SampleNoise);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 3, n_u = 4;
    const Mat support = random_matrix(3, d, rng);
    const std::vector<int> labels = {6, 6, 7};
    Mat y(n_u, 2);
    for (int i = 0; i < n_u; ++i) {
      y(i, 0) = rng.next_double() * 0.5;
      y(i, 1) = rng.next_double() * 0.5;
    }
    const Mat u = random_matrix(n_u, d, rng);
    const Mat p = reestimate_prototypes(y, u, support, labels, 5);

    for (int c = 0; c < 2; ++c) {
      Vec numer = Vec::Zero(d);
      double denom = 0;
      for (int i = 0; i < n_u; ++i) {
        numer += y(i, c) * u.row(i).transpose();
        denom += y(i, c);
      }
      for (size_t s = 0; s < labels.size(); ++s)
        if (labels[s] == 6 + c) {
          numer += support.row(static_cast<Eigen::Index>(s)).transpose();
          denom += 1.0;
        }
      CHECK((p.col(c) - numer / denom).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("EMA update blends and stays on the segment") {
  Mat p_old(2, 1), p_new(2, 1);
  p_old << 0.0, 0.0;
  p_new << 2.0, 4.0;
  SUBCASE("alpha = 1 returns the new estimate") {
    CHECK(ema_update(p_old, p_new, 1.0) == p_new);
  }
  SUBCASE("alpha = 0.5 is the midpoint") {
    const Mat mid = ema_update(p_old, p_new, 0.5);
    CHECK(mid(0, 0) == doctest::Approx(1.0));
    CHECK(mid(1, 0) == doctest::Approx(2.0));
  }
  SUBCASE("result is a convex combination columnwise") {
    CounterRng rng(7, 0, Draw::SampleNoise);
    for (int trial = 0; trial < 100; ++trial) {
      const Mat a = random_matrix(3, 2, rng);
      const Mat b = random_matrix(3, 2, rng);
      const double alpha = 0.01 + 0.99 * rng.next_double();
      const Mat out = ema_update(a, b, alpha);
      for (int j = 0; j < 2; ++j) {
        const double lo = std::min(a.col(j).minCoeff(), b.col(j).minCoeff());
        const double hi = std::max(a.col(j).maxCoeff(), b.col(j).maxCoeff());
        CHECK(out.col(j).minCoeff() >= lo - 1e-12);
        CHECK(out.col(j).maxCoeff() <= hi + 1e-12);
      }
    }
  }
  SUBCASE("alpha outside (0, 1] is rejected") {
    CHECK_THROWS_AS(ema_update(p_old, p_new, 0.0), ConfigError);
    CHECK_THROWS_AS(ema_update(p_old, p_new, 1.5), ConfigError);
  }
}

namespace {

// d=2 identity extractor plus a hand-positioned episode for loop tests.
struct TinyRefineSetup {
  ModelState state;
  ClassifierWeights weights;
  Episode episode;
};

TinyRefineSetup tiny_setup(double gamma, std::vector<Vec> unlabeled) {
  TinyRefineSetup s;
  ModelConfig mc;
  mc.input_dim = 2;
  mc.hidden = {};
  mc.feature_dim = 2;
  s.state = init_model(mc, 1);
  s.state.scale_gamma = gamma;

  Mat wb(2, 2);
  wb << 1.0, -1.0, 0.2, 0.3;
  Mat support_f(2, 2);
  support_f << 0.1, 1.0, -0.2, 0.9;
  s.episode.n_base = 2;
  s.episode.spec.n_way = 2;
  s.episode.support = {{support_f.row(0).transpose(), 3}, {support_f.row(1).transpose(), 4}};
  std::vector<int> hidden(unlabeled.size(), 3);
  s.episode.unlabeled = UnlabeledSet(std::move(unlabeled), std::move(hidden));
  const Mat protos =
      compute_prototypes(support_f, {3, 4}, 2, 2);
  s.weights = build_joint_weights(wb, protos);
  return s;
}

}  // namespace

TEST_CASE("refinement leaves prototypes unchanged when all mass is on base classes") {
  // gamma large enough that the novel softmax mass underflows to exactly zero
  auto s = tiny_setup(5000.0, {Vec{{1.0, 0.2}}, Vec{{1.0, 0.21}}});
  // unlabeled points sit on the first base weight direction
  RefinementConfig cfg;
  const RefineResult out = refine_loop(s.state, s.weights, s.episode, cfg);
  CHECK(out.weights.novel == s.weights.novel);
  CHECK(out.weights.base == s.weights.base);
}

TEST_CASE("two refinement steps equal two manual single-step applications") {
  auto s = tiny_setup(4.0, {Vec{{0.3, 0.8}}, Vec{{-0.1, 1.1}}, Vec{{0.9, 0.1}}});
  RefinementConfig two;
  two.n_steps = 2;
  two.alpha = 0.6;
  const RefineResult direct = refine_loop(s.state, s.weights, s.episode, two);

  RefinementConfig one;
  one.n_steps = 1;
  one.alpha = 0.6;
  const RefineResult first = refine_loop(s.state, s.weights, s.episode, one);
  const RefineResult second = refine_loop(s.state, first.weights, s.episode, one);
  CHECK((direct.weights.novel - second.weights.novel).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("refine_loop matches an independent brute-force implementation") {
  auto s = tiny_setup(3.0, {Vec{{0.4, 0.7}}, Vec{{-0.3, 1.0}}, Vec{{0.8, -0.1}}});
  RefinementConfig cfg;
  cfg.n_steps = 3;
  cfg.alpha = 0.7;
  const RefineResult out = refine_loop(s.state, s.weights, s.episode, cfg);

  const auto to_cols = [](const Mat& m) {
    std::vector<std::vector<double>> cols;
    for (int j = 0; j < m.cols(); ++j) {
      std::vector<double> col;
      for (int i = 0; i < m.rows(); ++i) col.push_back(m(i, j));
      cols.push_back(col);
    }
    return cols;
  };
  std::vector<std::vector<double>> support, unlabeled;
  for (const auto& e : s.episode.support) support.push_back({e.features(0), e.features(1)});
  for (const auto& u : s.episode.unlabeled.features()) unlabeled.push_back({u(0), u(1)});

  const auto refined = brute_force_refine(to_cols(s.weights.base), to_cols(s.weights.novel),
                                          support, {0, 1}, unlabeled, 3.0, 3, 0.7);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 2; ++i)
      CHECK(out.weights.novel(i, c) ==
            doctest::Approx(refined[static_cast<size_t>(c)][static_cast<size_t>(i)])
                .epsilon(1e-10));
}

TEST_CASE("refine_loop on an empty unlabeled set returns unchanged weights with a flag") {
  auto s = tiny_setup(3.0, {});
  const RefineResult out = refine_loop(s.state, s.weights, s.episode, RefinementConfig{});
  CHECK(out.empty_unlabeled);
  CHECK(out.weights.novel == s.weights.novel);
}

TEST_CASE("base weights are bit-identical across refinement") {
  CounterRng rng(15, 0, Draw::SampleNoise);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec> u;
    const int n_u = 1 + rng.next_int(6);
    for (int i = 0; i < n_u; ++i) u.push_back(Vec{{rng.next_gaussian(), rng.next_gaussian()}});
    auto s = tiny_setup(1.0 + 4.0 * rng.next_double(), std::move(u));
    RefinementConfig cfg;
    cfg.n_steps = 1 + rng.next_int(3);
    cfg.alpha = 0.05 + 0.95 * rng.next_double();
    const RefineResult out = refine_loop(s.state, s.weights, s.episode, cfg);
    CHECK(out.weights.base == s.weights.base);
  }
}

TEST_CASE("refined prototypes stay inside the support/unlabeled norm hull") {
  CounterRng rng(16, 0, Draw::SampleNoise);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec> u;
    const int n_u = 1 + rng.next_int(6);
    for (int i = 0; i < n_u; ++i) u.push_back(Vec{{rng.next_gaussian(), rng.next_gaussian()}});
    auto s = tiny_setup(2.0, std::move(u));
    double max_norm = 0.0;
    for (const auto& x : s.episode.unlabeled.features()) max_norm = std::max(max_norm, x.norm());
    for (const auto& e : s.episode.support) max_norm = std::max(max_norm, e.features.norm());

    RefinementConfig cfg;
    cfg.n_steps = 2;
    cfg.alpha = 0.5 + 0.5 * rng.next_double();
    const RefineResult out = refine_loop(s.state, s.weights, s.episode, cfg);
    for (int j = 0; j < out.weights.n_way(); ++j)
      CHECK(out.weights.novel.col(j).norm() <= max_norm + 1e-9);
  }
}

TEST_CASE("refinement is equivariant to a consistent permutation of novel classes") {
  auto s = tiny_setup(3.5, {Vec{{0.2, 0.9}}, Vec{{0.8, 0.3}}});
  RefinementConfig cfg;
  cfg.n_steps = 2;
  cfg.alpha = 0.8;
  const RefineResult out = refine_loop(s.state, s.weights, s.episode, cfg);

  // Swap the two novel classes everywhere: weights, support labels.
  TinyRefineSetup swapped = s;
  swapped.weights.novel.col(0) = s.weights.novel.col(1);
  swapped.weights.novel.col(1) = s.weights.novel.col(0);
  for (auto& e : swapped.episode.support) e.label = e.label == 3 ? 4 : 3;
  const RefineResult out2 = refine_loop(swapped.state, swapped.weights, swapped.episode, cfg);
  CHECK((out.weights.novel.col(0) - out2.weights.novel.col(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.weights.novel.col(1) - out2.weights.novel.col(0)).cwiseAbs().maxCoeff() < 1e-12);
}
