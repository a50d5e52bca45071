#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "incfsl/experiment.hpp"

namespace {

incfsl::ExperimentConfig load_or_default(const std::string& config_path,
                                         const std::string& output_dir) {
  incfsl::ExperimentConfig cfg =
      config_path.empty() ? incfsl::default_config() : incfsl::load_config(config_path);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incfsl: semi-supervised incremental few-shot learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  app.add_option("-c,--config", config_path, "experiment config (JSON)");
  app.add_option("-o,--output", output_dir, "override the config's output directory");

  auto* synth = app.add_subcommand("synth", "synthesize the dataset bundle");
  auto* pretrain = app.add_subcommand("pretrain", "supervised pre-training on base classes");

  auto* metatrain = app.add_subcommand("metatrain", "episodic meta-training");
  std::string alg = "alg1";
  metatrain->add_option("algorithm", alg, "alg1 (episodic) or alg2 (fake unlabeled)")
      ->check(CLI::IsMember({"alg1", "alg2"}))
      ->required();

  auto* evaluate = app.add_subcommand("evaluate", "run the incremental evaluation protocol");
  std::string mode = "semi";
  std::string method = "full";
  evaluate->add_option("mode", mode, "inductive, transductive or semi")
      ->check(CLI::IsMember({"inductive", "transductive", "semi"}))
      ->required();
  evaluate->add_option("-m,--method", method, "baseline, pr, fake or full")
      ->check(CLI::IsMember({"baseline", "pr", "fake", "full"}));

  auto* ablate = app.add_subcommand("ablate", "evaluate all four method variants");
  auto* sweep = app.add_subcommand("sweep", "unlabeled base:novel ratio sweep");
  auto* report = app.add_subcommand("report", "emit plots and a text summary");
  auto* dump = app.add_subcommand("default-config", "print the default config and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump->parsed()) {
      std::cout << incfsl::config_to_json(incfsl::default_config());
      return 0;
    }
    const incfsl::ExperimentConfig cfg = load_or_default(config_path, output_dir);
    if (synth->parsed()) {
      incfsl::run_synth(cfg);
    } else if (pretrain->parsed()) {
      incfsl::run_pretrain(cfg);
    } else if (metatrain->parsed()) {
      incfsl::run_metatrain(cfg, alg == "alg1" ? incfsl::MetaAlgorithm::Episodic
                                               : incfsl::MetaAlgorithm::FakeUnlabeled);
    } else if (evaluate->parsed()) {
      const incfsl::EpisodeMode m = mode == "inductive" ? incfsl::EpisodeMode::Inductive
                                    : mode == "transductive"
                                        ? incfsl::EpisodeMode::Transductive
                                        : incfsl::EpisodeMode::SemiSupervised;
      incfsl::run_evaluate(cfg, m, incfsl::method_from_name(method));
    } else if (ablate->parsed()) {
      incfsl::run_ablate(cfg);
    } else if (sweep->parsed()) {
      incfsl::run_sweep(cfg);
    } else if (report->parsed()) {
      incfsl::run_report(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
