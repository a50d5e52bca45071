#include "incfsl/evaluation.hpp"

#include <cmath>

namespace incfsl {

const std::array<const char*, EpisodeMetrics::kFieldCount>& EpisodeMetrics::field_names() {
  static const std::array<const char*, kFieldCount> names = {
      "acc_all_all", "acc_b_all", "acc_n_all", "acc_b_b",
      "acc_n_n",     "delta_b",   "delta_n",   "delta"};
  return names;
}

double EpisodeMetrics::field(int i) const {
  switch (i) {
    case 0: return acc_all_all;
    case 1: return acc_b_all;
    case 2: return acc_n_all;
    case 3: return acc_b_b;
    case 4: return acc_n_n;
    case 5: return delta_b;
    case 6: return delta_n;
    case 7: return delta;
  }
  throw std::out_of_range("EpisodeMetrics::field");
}

EpisodeMetrics metrics_from_accuracies(double acc_b_all, double acc_n_all, double acc_b_b,
                                       double acc_n_n) {
  EpisodeMetrics m;
  m.acc_b_all = acc_b_all;
  m.acc_n_all = acc_n_all;
  m.acc_b_b = acc_b_b;
  m.acc_n_n = acc_n_n;
  m.acc_all_all = 0.5 * (acc_b_all + acc_n_all);
  m.delta_b = acc_b_all - acc_b_b;
  m.delta_n = acc_n_all - acc_n_n;
  m.delta = 0.5 * (m.delta_b + m.delta_n);
  return m;
}

int argmax_row(const Mat& probs, int row) {
  int best = 0;
  for (int j = 1; j < probs.cols(); ++j)
    if (probs(row, j) > probs(row, best)) best = j;
  return best;
}

EpisodeMetrics score_episode(const PredictionMatrix& preds_joint,
                             const PredictionMatrix& preds_base_only,
                             const PredictionMatrix& preds_novel_only, const Episode& episode) {
  const int n_query = static_cast<int>(episode.query.size());
  if (preds_joint.rows() != n_query || preds_base_only.rows() != n_query ||
      preds_novel_only.rows() != n_query)
    throw ShapeError("score_episode: prediction matrices must cover the query set");
  const int n_base = episode.n_base;
  const int n_way = episode.spec.n_way;
  if (preds_joint.cols() != n_base + n_way)
    throw ShapeError("score_episode: joint predictions need N_b+N columns");
  if (preds_base_only.cols() != n_base)
    throw ShapeError("score_episode: base-only predictions need N_b columns");
  if (preds_novel_only.cols() != n_way)
    throw ShapeError("score_episode: novel-only predictions need N columns");

  int base_total = 0, novel_total = 0;
  int joint_correct = 0, b_all_correct = 0, n_all_correct = 0, b_b_correct = 0, n_n_correct = 0;
  for (int i = 0; i < n_query; ++i) {
    const int label = episode.query[static_cast<size_t>(i)].label;
    const bool is_base = label <= n_base;
    const int joint_pred = argmax_row(preds_joint.probs, i);
    const bool joint_ok = joint_pred == class_to_col(label);
    joint_correct += joint_ok ? 1 : 0;
    if (is_base) {
      ++base_total;
      b_all_correct += joint_ok ? 1 : 0;
      b_b_correct += argmax_row(preds_base_only.probs, i) == class_to_col(label) ? 1 : 0;
    } else {
      ++novel_total;
      n_all_correct += joint_ok ? 1 : 0;
      n_n_correct += argmax_row(preds_novel_only.probs, i) == (label - n_base - 1) ? 1 : 0;
    }
  }
  if (base_total == 0 || novel_total == 0)
    throw ShapeError("score_episode: query set must contain base and novel examples");

  EpisodeMetrics m;
  m.acc_all_all = static_cast<double>(joint_correct) / n_query;
  m.acc_b_all = static_cast<double>(b_all_correct) / base_total;
  m.acc_n_all = static_cast<double>(n_all_correct) / novel_total;
  m.acc_b_b = static_cast<double>(b_b_correct) / base_total;
  m.acc_n_n = static_cast<double>(n_n_correct) / novel_total;
  m.delta_b = m.acc_b_all - m.acc_b_b;
  m.delta_n = m.acc_n_all - m.acc_n_n;
  m.delta = 0.5 * (m.delta_b + m.delta_n);
  return m;
}

AggregateReport aggregate(const std::vector<EpisodeMetrics>& metrics) {
  if (metrics.empty()) throw ConfigError("aggregate: no episodes");
  AggregateReport report;
  report.episodes = static_cast<int>(metrics.size());
  const double e = static_cast<double>(metrics.size());
  for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f) {
    double mean = 0.0;
    for (const auto& m : metrics) mean += m.field(f);
    mean /= e;
    double half = 0.0;
    if (metrics.size() >= 2) {
      double ss = 0.0;
      for (const auto& m : metrics) ss += (m.field(f) - mean) * (m.field(f) - mean);
      const double stddev = std::sqrt(ss / (e - 1.0));
      half = 1.96 * stddev / std::sqrt(e);
    }
    report.fields[static_cast<size_t>(f)] = {mean, half};
  }
  return report;
}

EpisodeMetrics evaluate_episode_with(const ModelState& state, const ClassifierWeights& weights,
                                     const Episode& episode) {
  const Mat q_features = extract_features(state, stack_inputs(episode.query));
  const double gamma = state.scale_gamma;
  const PredictionMatrix joint = cosine_classify(q_features, weights.joint(), gamma);
  const PredictionMatrix base_only = cosine_classify(q_features, weights.base, gamma);
  const PredictionMatrix novel_only = cosine_classify(q_features, weights.novel, gamma);
  return score_episode(joint, base_only, novel_only, episode);
}

std::vector<RatioPoint> ratio_sweep(const EpisodeRunner& runner, const DatasetBundle& bundle,
                                    const SamplerConfig& base_cfg,
                                    const std::vector<std::pair<int, int>>& ratios,
                                    int episodes) {
  if (episodes < 1) throw ConfigError("ratio_sweep: episodes must be >= 1");
  if (base_cfg.spec.mode != EpisodeMode::SemiSupervised)
    throw ConfigError("ratio_sweep: requires semi-supervised mode");

  auto run_point = [&](std::pair<int, int> ratio) {
    SamplerConfig cfg = base_cfg;
    cfg.unlabeled_ratio = ratio;
    std::vector<EpisodeMetrics> metrics;
    metrics.reserve(static_cast<size_t>(episodes));
    for (int i = 0; i < episodes; ++i)
      metrics.push_back(runner(bundle, cfg, static_cast<uint64_t>(i)));
    return aggregate(metrics);
  };

  // Reference point: the equal ratio, reused if requested explicitly.
  AggregateReport equal_report;
  bool have_equal = false;
  std::vector<RatioPoint> points;
  for (const auto& ratio : ratios) {
    RatioPoint p;
    p.ratio = ratio;
    p.report = run_point(ratio);
    p.joint_acc = p.report.acc_all_all().mean;
    if (ratio.first == ratio.second) {
      equal_report = p.report;
      have_equal = true;
    }
    points.push_back(std::move(p));
  }
  if (!have_equal) equal_report = run_point({1, 1});
  for (auto& p : points) p.delta_vs_equal = p.joint_acc - equal_report.acc_all_all().mean;
  return points;
}

}  // namespace incfsl
