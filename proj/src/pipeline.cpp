#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "incfsl/dataset_io.hpp"
#include "incfsl/experiment.hpp"
#include "incfsl/svg_plot.hpp"

namespace incfsl {

namespace fs = std::filesystem;

namespace {

std::string fixed8(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.8f", v);
  return buf;
}

void ensure_output_dir(const ExperimentConfig& cfg) { fs::create_directories(cfg.output_dir); }

std::string artifact(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

std::string checkpoint_name(MetaAlgorithm alg) {
  return alg == MetaAlgorithm::Episodic ? "alg1.ckpt" : "alg2.ckpt";
}

Checkpoint load_checked(const ExperimentConfig& cfg, const std::string& name) {
  Checkpoint ck = load_checkpoint(artifact(cfg, name));
  const std::string expected = pipeline_hash(cfg);
  if (ck.config_hash != expected) {
    throw std::runtime_error("checkpoint " + name + " carries pipeline hash " + ck.config_hash +
                             " but the current config hashes to " + expected +
                             "; refusing to mix artifacts");
  }
  return ck;
}

void write_training_log(const std::string& path, const ExperimentConfig& cfg,
                        const std::vector<double>& losses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "# incfsl training log\n";
  os << "# config_hash: " << config_hash(cfg) << "\n";
  os << "step\tloss\n";
  for (size_t i = 0; i < losses.size(); ++i) os << i << "\t" << fixed8(losses[i]) << "\n";
}

std::vector<double> read_training_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<double> losses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) continue;
    std::istringstream row(line);
    long step;
    double loss;
    row >> step >> loss;
    losses.push_back(loss);
  }
  return losses;
}

// Reduces (queries + prototypes) to their top-2 principal components.
Mat project_2d(const Mat& rows) {
  Mat centered = rows.rowwise() - rows.colwise().mean();
  const double denom = std::max<double>(1.0, static_cast<double>(rows.rows() - 1));
  const Mat cov = centered.transpose() * centered / denom;
  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  const Mat basis = solver.eigenvectors().rightCols(2);
  return centered * basis;
}

}  // namespace

DatasetBundle load_or_synthesize(const ExperimentConfig& cfg) {
  if (!cfg.bundle_path.empty()) return load_bundle(cfg.bundle_path);
  const std::string path = artifact(cfg, "bundle.bin");
  if (fs::exists(path)) return load_bundle(path);
  return synthesize_dataset(cfg.synthetic, cfg.dataset_seed);
}

EpisodeMetrics evaluate_method_episode(Method method, const ModelState& state, const Mat& w_base,
                                       const Episode& episode, const ExperimentConfig& cfg) {
  const ModelState* use_state = &state;
  const Mat* use_wb = &w_base;
  ModelState adapted_state;
  Mat adapted_wb;
  if (method == Method::FullAdapt && !episode.unlabeled.empty() && cfg.adaptation.steps > 0) {
    AdaptResult adapted =
        adapt_model(state, w_base, episode, cfg.adaptation, cfg.evaluation.stream_seed);
    adapted_state = std::move(adapted.state);
    adapted_wb = std::move(adapted.w_base);
    use_state = &adapted_state;
    use_wb = &adapted_wb;
  }

  const Mat s_feats = extract_features(*use_state, stack_inputs(episode.support));
  const Mat protos = compute_prototypes(s_feats, labels_of(episode.support), episode.n_base,
                                        episode.spec.n_way);
  ClassifierWeights weights = build_joint_weights(*use_wb, protos);
  if (method != Method::Baseline)
    weights = refine_loop(*use_state, weights, episode, cfg.test_refinement).weights;
  return evaluate_episode_with(*use_state, weights, episode);
}

EvaluateOutcome run_method_evaluation(Method method, const ModelState& state, const Mat& w_base,
                                      const DatasetBundle& bundle, const ExperimentConfig& cfg,
                                      EpisodeMode mode,
                                      std::optional<std::pair<int, int>> ratio) {
  SamplerConfig scfg;
  scfg.spec = cfg.episode;
  scfg.spec.mode = mode;
  scfg.stream_seed = cfg.evaluation.stream_seed;
  scfg.eval_split = cfg.evaluation.split;
  scfg.unlabeled_ratio = ratio.value_or(std::pair<int, int>{1, 1});

  const int episodes = cfg.evaluation.episodes;
  std::vector<EpisodeMetrics> results(static_cast<size_t>(episodes));
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= episodes) break;
      try {
        const Episode ep = sample_test_episode(bundle, scfg, static_cast<uint64_t>(i));
        results[static_cast<size_t>(i)] =
            evaluate_method_episode(method, state, w_base, ep, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(episodes);
        break;
      }
    }
  };

  const int n_workers = std::max(1, std::min(cfg.evaluation.workers, episodes));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  EvaluateOutcome out;
  out.per_episode = std::move(results);
  out.report = aggregate(out.per_episode);
  out.report.stream_seed = scfg.stream_seed;
  out.report.config_hash = config_hash(cfg);
  return out;
}

void write_results_file(const std::string& path, const std::string& method,
                        const std::string& mode, const ExperimentConfig& cfg,
                        const std::vector<EpisodeMetrics>& per_episode,
                        const AggregateReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "# incfsl results\n";
  os << "# method: " << method << "\n";
  os << "# mode: " << mode << "\n";
  os << "# config_hash: " << config_hash(cfg) << "\n";
  os << "# pipeline_hash: " << pipeline_hash(cfg) << "\n";
  os << "# stream_seed: " << cfg.evaluation.stream_seed << "\n";
  os << "# episodes: " << per_episode.size() << "\n";
  os << "episode";
  for (const char* name : EpisodeMetrics::field_names()) os << "\t" << name;
  os << "\n";
  for (size_t i = 0; i < per_episode.size(); ++i) {
    os << i;
    for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f)
      os << "\t" << fixed8(per_episode[i].field(f));
    os << "\n";
  }
  for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f) {
    os << "# summary\t" << EpisodeMetrics::field_names()[static_cast<size_t>(f)] << "\t"
       << fixed8(report.fields[static_cast<size_t>(f)].mean) << "\t"
       << fixed8(report.fields[static_cast<size_t>(f)].ci_half) << "\n";
  }
}

ResultsFile read_results_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  ResultsFile out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("# method: ", 0) == 0) {
      out.method = line.substr(10);
    } else if (line.rfind("# mode: ", 0) == 0) {
      out.mode = line.substr(8);
    } else if (line.rfind("# config_hash: ", 0) == 0) {
      out.config_hash = line.substr(15);
    } else if (line.rfind("# stream_seed: ", 0) == 0) {
      out.stream_seed = std::stoull(line.substr(15));
    } else if (!line.empty() && line[0] != '#' && line.rfind("episode", 0) != 0) {
      std::istringstream row(line);
      long idx;
      row >> idx;
      EpisodeMetrics m;
      double v[EpisodeMetrics::kFieldCount];
      for (double& x : v) row >> x;
      m.acc_all_all = v[0];
      m.acc_b_all = v[1];
      m.acc_n_all = v[2];
      m.acc_b_b = v[3];
      m.acc_n_n = v[4];
      m.delta_b = v[5];
      m.delta_n = v[6];
      m.delta = v[7];
      out.per_episode.push_back(m);
    }
  }
  return out;
}

void run_synth(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = synthesize_dataset(cfg.synthetic, cfg.dataset_seed);
  const auto issues = validate_bundle(bundle);
  if (!issues.empty()) {
    std::ostringstream os;
    os << "synthesized bundle failed validation:";
    for (const auto& issue : issues) os << "\n  " << issue;
    throw std::runtime_error(os.str());
  }
  save_bundle(artifact(cfg, "bundle.bin"), bundle);
  std::cout << "synth: wrote " << artifact(cfg, "bundle.bin") << " ("
            << bundle.base_train.size() + bundle.base_val.size() + bundle.base_test.size()
            << " base examples, "
            << bundle.novel_train.size() + bundle.novel_val.size() + bundle.novel_test.size()
            << " novel examples)\n";
}

void run_pretrain(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = load_or_synthesize(cfg);
  TrainConfig tc = cfg.train;
  tc.episode.spec = cfg.episode;
  PretrainResult result = pretrain(bundle, cfg.model, tc);
  save_checkpoint(artifact(cfg, "pretrained.ckpt"), result.state, result.w_base,
                  pipeline_hash(cfg));
  write_training_log(artifact(cfg, "pretrain_log.tsv"), cfg, result.loss_trajectory);
  std::cout << "pretrain: " << result.loss_trajectory.size() << " steps, final loss "
            << (result.loss_trajectory.empty() ? 0.0 : result.loss_trajectory.back()) << "\n";
}

void run_metatrain(const ExperimentConfig& cfg, MetaAlgorithm alg) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = load_or_synthesize(cfg);
  const Checkpoint pre = load_checked(cfg, "pretrained.ckpt");
  TrainConfig tc = cfg.train;
  tc.episode.spec = cfg.episode;
  tc.episode.eval_split = EvalSplit::Train;
  MetaTrainResult result = meta_train(pre.state, pre.w_base, bundle, tc, alg);
  const std::string name = checkpoint_name(alg);
  save_checkpoint(artifact(cfg, name), result.state, result.w_base, pipeline_hash(cfg));
  write_training_log(
      artifact(cfg, alg == MetaAlgorithm::Episodic ? "metatrain_alg1_log.tsv"
                                                   : "metatrain_alg2_log.tsv"),
      cfg, result.loss_trajectory);
  std::cout << "metatrain: wrote " << name << ", final loss "
            << (result.loss_trajectory.empty() ? 0.0 : result.loss_trajectory.back()) << "\n";
}

void run_evaluate(const ExperimentConfig& cfg, EpisodeMode mode, Method method) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = load_or_synthesize(cfg);
  const Checkpoint ck = load_checked(cfg, checkpoint_name(method_algorithm(method)));
  const EvaluateOutcome outcome =
      run_method_evaluation(method, ck.state, ck.w_base, bundle, cfg, mode);
  const std::string path = artifact(cfg, std::string("results_") + method_name(method) + "_" +
                                             mode_name(mode) + ".tsv");
  write_results_file(path, method_name(method), mode_name(mode), cfg, outcome.per_episode,
                     outcome.report);
  std::cout << "evaluate: " << method_name(method) << " @ " << mode_name(mode) << " -> acc "
            << fixed8(outcome.report.acc_all_all().mean) << " +/- "
            << fixed8(outcome.report.acc_all_all().ci_half) << "\n";
}

void run_ablate(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = load_or_synthesize(cfg);
  const EpisodeMode mode = cfg.evaluation.mode;
  const Method methods[4] = {Method::Baseline, Method::PlainPR, Method::FakeUnlabeled,
                             Method::FullAdapt};
  const char* row_labels[4] = {"baseline", "+pr", "+fake_unlabeled", "+adaptation"};

  std::vector<EvaluateOutcome> outcomes;
  for (Method m : methods) {
    const Checkpoint ck = load_checked(cfg, checkpoint_name(method_algorithm(m)));
    outcomes.push_back(run_method_evaluation(m, ck.state, ck.w_base, bundle, cfg, mode));
    const std::string path = artifact(cfg, std::string("results_") + method_name(m) + "_" +
                                               mode_name(mode) + ".tsv");
    write_results_file(path, method_name(m), mode_name(mode), cfg, outcomes.back().per_episode,
                       outcomes.back().report);
  }

  std::ofstream os(artifact(cfg, "ablation.tsv"));
  os << "# incfsl ablation\n# config_hash: " << config_hash(cfg)
     << "\n# stream_seed: " << cfg.evaluation.stream_seed << "\n# mode: " << mode_name(mode)
     << "\n";
  os << "method";
  for (const char* f : EpisodeMetrics::field_names()) os << "\t" << f << "\t" << f << "_ci";
  os << "\n";
  for (int i = 0; i < 4; ++i) {
    os << row_labels[i];
    for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f) {
      const auto& fld = outcomes[static_cast<size_t>(i)].report.fields[static_cast<size_t>(f)];
      os << "\t" << fixed8(fld.mean) << "\t" << fixed8(fld.ci_half);
    }
    os << "\n";
  }

  // Paired per-episode joint accuracies, one method per column.
  std::ofstream paired(artifact(cfg, "ablation_paired.tsv"));
  paired << "# incfsl paired joint accuracy\n# config_hash: " << config_hash(cfg) << "\n";
  paired << "episode";
  for (const char* label : row_labels) paired << "\t" << label;
  paired << "\n";
  for (int e = 0; e < cfg.evaluation.episodes; ++e) {
    paired << e;
    for (const auto& outcome : outcomes)
      paired << "\t" << fixed8(outcome.per_episode[static_cast<size_t>(e)].acc_all_all);
    paired << "\n";
  }
  std::cout << "ablate: wrote " << artifact(cfg, "ablation.tsv") << "\n";
}

void run_sweep(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);
  const DatasetBundle bundle = load_or_synthesize(cfg);
  const Method methods[2] = {Method::PlainPR, Method::FullAdapt};

  std::ofstream os(artifact(cfg, "sweep.tsv"));
  os << "# incfsl unlabeled-ratio sweep\n# config_hash: " << config_hash(cfg)
     << "\n# stream_seed: " << cfg.evaluation.stream_seed << "\n";
  os << "method\tratio_base\tratio_novel\tacc\tacc_ci\tdelta_vs_equal\n";
  for (Method m : methods) {
    const Checkpoint ck = load_checked(cfg, checkpoint_name(method_algorithm(m)));
    EpisodeRunner runner = [&](const DatasetBundle& b, const SamplerConfig& scfg,
                               uint64_t index) {
      const Episode ep = sample_test_episode(b, scfg, index);
      return evaluate_method_episode(m, ck.state, ck.w_base, ep, cfg);
    };
    SamplerConfig base_cfg;
    base_cfg.spec = cfg.episode;
    base_cfg.spec.mode = EpisodeMode::SemiSupervised;
    base_cfg.stream_seed = cfg.evaluation.stream_seed;
    base_cfg.eval_split = cfg.evaluation.split;
    const auto points =
        ratio_sweep(runner, bundle, base_cfg, cfg.evaluation.ratios, cfg.evaluation.episodes);
    for (const auto& p : points) {
      os << method_name(m) << "\t" << p.ratio.first << "\t" << p.ratio.second << "\t"
         << fixed8(p.joint_acc) << "\t" << fixed8(p.report.acc_all_all().ci_half) << "\t"
         << fixed8(p.delta_vs_equal) << "\n";
    }
  }
  std::cout << "sweep: wrote " << artifact(cfg, "sweep.tsv") << "\n";
}

void run_report(const ExperimentConfig& cfg) {
  ensure_output_dir(cfg);

  // Loss curves.
  {
    std::vector<svg::Series> series;
    const char* logs[3] = {"pretrain_log.tsv", "metatrain_alg1_log.tsv",
                           "metatrain_alg2_log.tsv"};
    const char* labels[3] = {"pretrain", "metatrain alg1", "metatrain alg2"};
    for (int i = 0; i < 3; ++i) {
      const std::string path = artifact(cfg, logs[i]);
      if (!fs::exists(path)) continue;
      svg::Series s;
      s.label = labels[i];
      const auto losses = read_training_log(path);
      for (size_t k = 0; k < losses.size(); ++k) {
        s.x.push_back(static_cast<double>(k));
        s.y.push_back(losses[k]);
      }
      series.push_back(std::move(s));
    }
    if (!series.empty())
      svg::write_line_chart(artifact(cfg, "loss_curves.svg"), "training loss", series, "step",
                            "cross-entropy");
  }

  // Ratio-sweep bars.
  if (fs::exists(artifact(cfg, "sweep.tsv"))) {
    std::ifstream is(artifact(cfg, "sweep.tsv"));
    std::string line;
    std::map<std::string, std::map<std::string, double>> acc;  // method -> ratio -> delta
    std::vector<std::string> ratio_order;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("method", 0) == 0) continue;
      std::istringstream row(line);
      std::string method;
      int rb, rn;
      double a, ci, delta;
      row >> method >> rb >> rn >> a >> ci >> delta;
      const std::string ratio = std::to_string(rb) + ":" + std::to_string(rn);
      if (acc.find(method) == acc.end() || acc[method].find(ratio) == acc[method].end()) {
        if (std::find(ratio_order.begin(), ratio_order.end(), ratio) == ratio_order.end())
          ratio_order.push_back(ratio);
      }
      acc[method][ratio] = a;
    }
    std::vector<svg::BarGroup> groups;
    for (const auto& [method, per_ratio] : acc) {
      svg::BarGroup g;
      g.label = method;
      for (const auto& r : ratio_order)
        g.values.push_back(per_ratio.count(r) ? per_ratio.at(r) : 0.0);
      groups.push_back(std::move(g));
    }
    if (!groups.empty())
      svg::write_bar_chart(artifact(cfg, "sweep.svg"), "joint accuracy by unlabeled ratio",
                           ratio_order, groups, "joint accuracy");
  }

  // 2D projection of one episode's query features and prototypes.
  if (fs::exists(artifact(cfg, "alg2.ckpt"))) {
    const DatasetBundle bundle = load_or_synthesize(cfg);
    const Checkpoint ck = load_checked(cfg, "alg2.ckpt");
    SamplerConfig scfg;
    scfg.spec = cfg.episode;
    scfg.spec.mode = cfg.evaluation.mode;
    scfg.stream_seed = cfg.evaluation.stream_seed;
    scfg.eval_split = cfg.evaluation.split;
    const Episode ep = sample_test_episode(bundle, scfg, 0);

    const Mat q_feats = extract_features(ck.state, stack_inputs(ep.query));
    const Mat s_feats = extract_features(ck.state, stack_inputs(ep.support));
    const Mat protos =
        compute_prototypes(s_feats, labels_of(ep.support), ep.n_base, ep.spec.n_way);

    Mat all(q_feats.rows() + protos.cols(), q_feats.cols());
    all.topRows(q_feats.rows()) = q_feats;
    all.bottomRows(protos.cols()) = protos.transpose();
    const Mat proj = project_2d(all);

    const char* colors[8] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                             "#9467bd", "#8c564b", "#17becf", "#e377c2"};
    std::map<int, svg::PointGroup> per_class;
    for (Eigen::Index i = 0; i < q_feats.rows(); ++i) {
      const int label = ep.query[static_cast<size_t>(i)].label;
      auto& group = per_class[label];
      if (group.x.empty()) {
        const bool is_base = label <= ep.n_base;
        group.label = (is_base ? "base " : "novel ") + std::to_string(label);
        group.color = colors[static_cast<size_t>(label) % 8];
      }
      group.x.push_back(proj(i, 0));
      group.y.push_back(proj(i, 1));
    }
    std::vector<svg::PointGroup> groups;
    for (auto& [label, group] : per_class) groups.push_back(std::move(group));
    svg::PointGroup proto_group;
    proto_group.label = "prototypes";
    proto_group.color = "#000000";
    proto_group.as_triangle = true;
    for (Eigen::Index j = 0; j < protos.cols(); ++j) {
      proto_group.x.push_back(proj(q_feats.rows() + j, 0));
      proto_group.y.push_back(proj(q_feats.rows() + j, 1));
    }
    groups.push_back(std::move(proto_group));
    svg::write_scatter(artifact(cfg, "episode_projection.svg"),
                       "episode 0: queries and prototypes (2D projection)", groups);
  }

  // Text summary of any results files present.
  std::ofstream summary(artifact(cfg, "summary.txt"));
  summary << "incfsl experiment summary\nconfig_hash: " << config_hash(cfg) << "\n\n";
  for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("results_", 0) != 0 || entry.path().extension() != ".tsv") continue;
    const ResultsFile rf = read_results_file(entry.path().string());
    if (rf.per_episode.empty()) continue;
    const AggregateReport report = aggregate(rf.per_episode);
    summary << rf.method << " @ " << rf.mode << " (" << rf.per_episode.size() << " episodes)\n";
    for (int f = 0; f < EpisodeMetrics::kFieldCount; ++f) {
      summary << "  " << EpisodeMetrics::field_names()[static_cast<size_t>(f)] << ": "
              << fixed8(100.0 * report.fields[static_cast<size_t>(f)].mean) << " +/- "
              << fixed8(100.0 * report.fields[static_cast<size_t>(f)].ci_half) << "\n";
    }
    summary << "\n";
  }
  std::cout << "report: wrote summary and plots in " << cfg.output_dir << "\n";
}

void run_pipeline(const ExperimentConfig& cfg) {
  run_synth(cfg);
  run_pretrain(cfg);
  run_metatrain(cfg, MetaAlgorithm::Episodic);
  run_metatrain(cfg, MetaAlgorithm::FakeUnlabeled);
  run_ablate(cfg);  // covers per-method evaluation at the configured mode
  run_sweep(cfg);
  run_report(cfg);
}

}  // namespace incfsl
