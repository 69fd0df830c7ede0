#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cmm/bellman.hpp"
#include "cmm/ivr.hpp"
#include "cmm/rela_game.hpp"
#include "cmm/serialization.hpp"
#include "cmm/solver.hpp"

namespace cmm {

enum class ExperimentKind { kIvrLinear, kIvrNonlinear, kBellmanEval, kBellmanImprove, kBiasDemo, kIvanov };

std::string_view experiment_name(ExperimentKind k);
std::optional<ExperimentKind> parse_experiment(std::string_view name);
const std::vector<ExperimentKind>& all_experiments();

struct ModelBlock {
  FeatureMap h_features;
  std::optional<FeatureMap> f_features;  // unset: tabular over the conditioning key
  double radius = kDefaultRadius;
  GameOptions game;
};

struct BellmanBlock {
  std::optional<TabularMDP> custom;  // unset: the 4x4 gridworld
  double gamma = 0.9;
  std::optional<std::vector<int>> policy;  // unset: the uniform behavior policy
  std::optional<std::size_t> n;            // unset: exact dataset
  bool literal_display = false;
  int rounds = 10;

  TabularMDP mdp() const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kIvrLinear;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  LinearIVScenario linear;
  NonlinearIVScenario nonlinear;
  BellmanBlock bellman;
  ModelBlock model;
  SolverConfig solver;
  IvanovConfig ivanov;
  bool kappa_auto = true;
  std::size_t trials = 10000;
  std::optional<std::vector<double>> bias_h;  // unset: the h_star coefficients
};

ExperimentConfig default_config(ExperimentKind kind);
// Validates every block before returning; errors name the field path.
ExperimentConfig parse_config(const Json& j);
// Every default materialized; parse_config(resolved_json(c)) reproduces c.
Json resolved_json(const ExperimentConfig& c);

Json to_json(const SolverConfig& s);
SolverConfig solver_from_json(const Json& j, const std::string& path = "solver");

// Text listing of every experiment kind with its default config.
std::string list_experiments();

struct RunOptions {
  std::optional<std::string> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  bool quiet = false;
};

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string kind;  // divergence | infeasible | numerical | validation | error
  std::string message;
};

struct RunReport {
  std::vector<std::pair<std::uint64_t, std::vector<std::pair<std::string, double>>>> rows;
  std::vector<SeedFailure> failures;
  std::vector<std::string> manifest;  // paths relative to the output directory
  int exit_code = 0;
};

// Runs every seed and writes results.csv, report.json and
// resolved_config.json (plus per-seed artifacts) under the output directory.
RunReport run_experiment(ExperimentConfig cfg, const RunOptions& opts, std::ostream& log);

// Rebuilds the artifact's game on the dataset, writes the slack CSV to `out`
// and prints the top rows. Returns the process exit code.
int diagnose(const std::filesystem::path& artifact, const std::filesystem::path& dataset,
             const std::optional<std::filesystem::path>& out, std::size_t top, std::ostream& log,
             std::ostream& err);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace cmm
