#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cmm/error.hpp"
#include "cmm/harness.hpp"

namespace {

int run_config(cmm::ExperimentConfig cfg, const cmm::RunOptions& opts) {
  const cmm::RunReport rep = cmm::run_experiment(std::move(cfg), opts, std::cerr);
  // The harness already logged failures unless quiet.
  for (const auto& f : opts.quiet ? rep.failures : std::vector<cmm::SeedFailure>{}) {
    std::cerr << "seed " << f.seed << " failed (" << f.kind << "): " << f.message << '\n';
  }
  return rep.exit_code;
}

void print_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional moment matching via residual games"};
  app.require_subcommand(1);

  std::string out;
  std::string seeds;
  bool quiet = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output directory (overrides the config)");
    sub->add_option("--seed-override", seeds, "Comma-separated seed list");
    sub->add_flag("--quiet", quiet, "Suppress progress output");
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("config", config_path, "Config file")->required();
  add_common(run);

  std::string artifact, dataset, slack_out;
  std::size_t top = 10;
  auto* diag = app.add_subcommand("diagnose", "Per-z slack report for a trained model");
  diag->add_option("artifact", artifact, "model.json")->required();
  diag->add_option("dataset", dataset, "dataset CSV")->required();
  diag->add_option("--out", slack_out, "Slack CSV path (default slack.csv)");
  diag->add_option("--top", top, "Rows to print");

  auto* list = app.add_subcommand("list-experiments", "List experiment kinds and defaults");

  auto* ivr = app.add_subcommand("ivr-demo", "Linear IV comparison: OLS, 2SLS and the game");
  add_common(ivr);
  auto* bell = app.add_subcommand("bellman-demo", "Gridworld policy improvement via the game");
  add_common(bell);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cmm::RunOptions opts;
    if (!out.empty()) opts.out = out;
    if (!seeds.empty()) opts.seeds = cmm::parse_seed_list(seeds);
    opts.quiet = quiet;

    if (*list) {
      std::cout << cmm::list_experiments();
      return 0;
    }
    if (*diag) {
      std::optional<std::filesystem::path> o;
      if (!slack_out.empty()) o = slack_out;
      return cmm::diagnose(artifact, dataset, o, top, std::cout, std::cerr);
    }
    if (*run) {
      return run_config(cmm::parse_config(cmm::read_json_file(config_path)), opts);
    }
    if (*ivr) {
      cmm::ExperimentConfig cfg = cmm::default_config(cmm::ExperimentKind::kIvrLinear);
      if (!opts.seeds) opts.seeds = std::vector<std::uint64_t>{1};
      const int code = run_config(cfg, opts);
      const auto dir = std::filesystem::path(opts.out.value_or(cfg.output_dir)) /
                       ("seed_" + std::to_string(opts.seeds->front()));
      print_file(dir / "ivr_report.csv");
      return code;
    }
    if (*bell) {
      cmm::ExperimentConfig cfg = cmm::default_config(cmm::ExperimentKind::kBellmanImprove);
      if (!opts.seeds) opts.seeds = std::vector<std::uint64_t>{1};
      const int code = run_config(cfg, opts);
      const auto dir = std::filesystem::path(opts.out.value_or(cfg.output_dir)) /
                       ("seed_" + std::to_string(opts.seeds->front()));
      print_file(dir / "bellman_rounds.csv");
      print_file(dir / "policy.csv");
      return code;
    }
  } catch (const cmm::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cmm::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
